#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cpsu/sim.hpp"

namespace cpsu {

/// Deterministic mapping from observation to action. Implementations are
/// immutable after construction and safe to share across threads.
class Policy {
public:
    virtual ~Policy() = default;
    virtual Action act(const Observation& obs) const = 0;
    virtual std::string name() const = 0;
};

class NoOpPolicy final : public Policy {
public:
    Action act(const Observation&) const override { return Action::NoOp; }
    std::string name() const override { return "noop"; }
};

struct EnergyOracleParams {
    // Swing regime: depth-limited action search driving the rod energy to the
    // upright level while keeping the cart's projected stopping point on the
    // track.
    int swing_depth = 3;          // decision levels in the swing search
    int swing_hold = 2;           // control steps each searched action is held
    double energy_offset = 0.02;  // J, aim slightly above the upright energy
    double track_margin = 0.25;   // m, soft bound on the projected stopping point
    double margin_weight = 100.0;

    // Engagement cone: exhaustive lookahead maximizing discounted-free reward
    // once the rod is within reach of the top.
    double cone_deg = 45.0;
    double cone_rate = 2.0;       // rad/s
    int balance_horizon = 5;      // exhaustive lookahead depth in the cone
    double terminal_angle_weight = 20.0;
    double terminal_pos_weight = 100.0;

    // Captured regime: bang-bang servo on a linear sliding surface once the
    // rod is nearly upright and slow.
    double capture_deg = 45.0;
    double capture_rate = 2.0;    // rad/s
    double rate_gain = 0.25;       // surface weight on the rod rate (rad/s)
    double pos_gain = -0.05;       // surface weight on cart position (m)
    double vel_gain = -0.15;      // surface weight on cart velocity (m/s)
    double cart_sat = 0.02;       // rad, cap on the cart term of the surface
    double surface_deadband = 0.01;  // rad, |surface| below this emits NoOp

    void validate() const;
};

/// Analytic swing-up-and-balance controller serving as the teacher in place
/// of an externally trained network. Three regimes: a short exhaustive
/// lookahead on a rod-energy objective for the swing-up, a reward-maximizing
/// lookahead that plans the catch near the top, and a linear sliding-surface
/// servo once the rod is captured. Stateless and deterministic.
class EnergyOracle final : public Policy {
public:
    explicit EnergyOracle(SimConfig sim = {}, EnergyOracleParams params = {});

    Action act(const Observation& obs) const override;
    std::string name() const override { return "energy"; }

    const EnergyOracleParams& params() const { return params_; }

private:
    double swing_cost(const SimState& s) const;
    double death_value(const SimState& s, int steps_left) const;
    double swing_return(const SimState& s, int depth) const;
    double balance_return(const SimState& s, int depth) const;

    SimConfig sim_;
    EnergyOracleParams params_;
    double energy_target_;  // rod potential energy at the upright equilibrium
    double brake_accel_;    // full-force cart acceleration, m/s^2
};

struct MlpLayer {
    int rows = 0;  // output dimension
    int cols = 0;  // input dimension
    std::vector<double> weights;  // row-major, rows*cols
    std::vector<double> bias;     // rows
};

/// Inference-only MLP with tanh hidden activations, matching the teacher
/// network's 4 -> 64 -> 64 -> 3 architecture when loaded from its weights.
class MlpPolicy final : public Policy {
public:
    explicit MlpPolicy(std::vector<MlpLayer> layers);

    Action act(const Observation& obs) const override;
    std::string name() const override { return "mlp"; }

    /// Affine-tanh chain; no activation on the output layer.
    std::array<double, 3> forward(const Observation& obs) const;

    int count_params() const;
    const std::vector<MlpLayer>& layers() const { return layers_; }

    static MlpPolicy from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    static MlpPolicy load(const std::string& path);
    void save(const std::string& path) const;

private:
    std::vector<MlpLayer> layers_;
};

/// Argmax with ties resolved toward the lowest action index.
int argmax3(const std::array<double, 3>& v);

}  // namespace cpsu
