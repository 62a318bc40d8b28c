#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>

#include <nlohmann/json_fwd.hpp>

#include "cpsu/rng.hpp"

namespace cpsu {

enum class Action : int { Left = 0, NoOp = 1, Right = 2 };

constexpr int kNumActions = 3;

/// Cart-pole swing-up task parameters. Angles are handled in degrees, cart
/// position in mm at the interface; the dynamics run in SI units internally.
struct SimConfig {
    double pole_length = 0.975;     // m, uniform rod pivoting at the cart
    double cart_mass = 1.0;         // kg
    double pole_mass = 0.3;         // kg
    double gravity = 9.81;          // m/s^2
    double motor_force = 1.0;       // N, magnitude of the bang-bang actuation
    double cart_friction = 0.05;    // N*s/m, viscous
    double pivot_friction = 0.003;  // N*m*s/rad, viscous

    double step_duration = 0.1;     // s per control step
    int integrator_substeps = 20;   // fixed-step RK4 substeps per control step

    double track_limit_mm = 390.0;
    int max_steps = 1000;
    double ang_vel_safety_limit = 100.0;  // in observable units

    std::array<double, 4> sensor_noise_std{0.0, 0.0, 0.0, 0.0};
    int action_delay_steps = 0;
    double start_perturbation_std = 0.0;  // deg / deg/s / mm / mm/s on reset

    double ang_vel_obs_scale = 40.0;   // deg/s per observable unit
    double lin_vel_obs_scale = 390.0;  // mm/s per observable unit

    void validate() const;  // throws ConfigError on violation

    static SimConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Ground-truth physical state. u: pole angle in degrees, 0 = hanging down,
/// +-180 = upright, wrapped to [-180, 180]. y: cart position in mm.
struct SimState {
    double u = 0.0;      // deg
    double u_dot = 0.0;  // deg/s
    double y = 0.0;      // mm
    double y_dot = 0.0;  // mm/s
};

/// The 4-vector delivered to policies.
struct Observation {
    double u_norm = 0.0;
    double u_dot_obs = 0.0;
    double y_norm = 0.0;
    double y_dot_obs = 0.0;

    std::array<double, 4> as_array() const { return {u_norm, u_dot_obs, y_norm, y_dot_obs}; }
};

struct StepResult {
    Observation observation;
    double reward = 0.0;
    bool terminated = false;
    bool truncated = false;
    bool in_zenith = false;
};

double wrap_angle_deg(double u);

/// r = 1/2 * (1 - cos(u*pi/180)) * cos(pi/2 * y/390) + bonus, bonus = 10 in
/// the zenith. The position factor is clamped at 0 once the cart is past the
/// track limit so rewards stay in [0, 11] for all states.
double reward_fn(const SimState& state, const SimConfig& cfg);

/// Zenith condition of the bonus reward: |u_norm| > 175/180 and
/// |u_dot_obs| < 6/40, both strict.
bool is_zenith(const SimState& state, const SimConfig& cfg);

/// Advance the frictional cart-pole ODE by dt under a constant horizontal
/// force on the cart (N), fixed-step RK4 with cfg.integrator_substeps steps.
SimState integrate(const SimState& state, double force, double dt, const SimConfig& cfg);

/// Total mechanical energy (J) of cart + rod, zero at hanging rest.
double mechanical_energy(const SimState& state, const SimConfig& cfg);

/// Energy of the rod alone (rotation about the pivot + potential), the
/// quantity the energy-shaping controller regulates.
double pendulum_energy(const SimState& state, const SimConfig& cfg);

class Simulator {
public:
    explicit Simulator(SimConfig cfg = {});

    /// Start a fresh episode at rest (plus optional seeded perturbation).
    Observation reset(std::uint64_t seed);

    /// Apply an action (through the delay queue, if configured) for one
    /// control step. Throws Error if the episode is already finished.
    StepResult step(Action action);

    const SimState& state() const { return state_; }
    const SimConfig& config() const { return cfg_; }
    int step_count() const { return step_count_; }
    bool done() const { return done_; }

    /// Noiseless observation of the current ground-truth state.
    Observation observe() const;

    /// Overwrite the ground-truth state (test hook / scenario setup).
    void set_state(const SimState& s) { state_ = s; }

private:
    Observation noisy_observation();

    SimConfig cfg_;
    SimState state_;
    Rng rng_;
    std::deque<Action> delay_queue_;
    int step_count_ = 0;
    bool done_ = false;
    bool started_ = false;
};

}  // namespace cpsu
