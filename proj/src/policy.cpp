#include "cpsu/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cpsu/errors.hpp"

namespace cpsu {

int argmax3(const std::array<double, 3>& v) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

void EnergyOracleParams::validate() const {
    if (swing_depth < 1 || swing_depth > 6)
        throw ConfigError("EnergyOracleParams: swing_depth must be in [1, 6]");
    if (swing_hold < 1 || swing_hold > 5)
        throw ConfigError("EnergyOracleParams: swing_hold must be in [1, 5]");
    if (balance_horizon < 1 || balance_horizon > 8)
        throw ConfigError("EnergyOracleParams: balance_horizon must be in [1, 8]");
    if (!(cone_deg > 0.0 && cone_deg < 90.0))
        throw ConfigError("EnergyOracleParams: cone_deg must be in (0, 90)");
    if (!(capture_deg > 0.0 && capture_deg <= cone_deg))
        throw ConfigError("EnergyOracleParams: capture_deg must be in (0, cone_deg]");
    for (double g : {energy_offset, track_margin, margin_weight, cone_rate,
                     terminal_angle_weight, terminal_pos_weight, capture_rate, rate_gain,
                     pos_gain, vel_gain, cart_sat, surface_deadband})
        if (!std::isfinite(g)) throw ConfigError("EnergyOracleParams: gains must be finite");
}

EnergyOracle::EnergyOracle(SimConfig sim, EnergyOracleParams params)
    : sim_(sim), params_(params) {
    sim_.validate();
    params_.validate();
    // Rod potential energy at the upright equilibrium, relative to hanging.
    energy_target_ = sim_.pole_mass * sim_.gravity * sim_.pole_length;
    brake_accel_ = sim_.motor_force / (sim_.cart_mass + sim_.pole_mass);
}

namespace {

// Where the cart would come to rest (m) under full opposing force.
double stop_point_m(const SimState& s, double brake_accel) {
    const double y = s.y / 1000.0;
    const double y_dot = s.y_dot / 1000.0;
    return y + y_dot * std::abs(y_dot) / (2.0 * brake_accel);
}

}  // namespace

double EnergyOracle::swing_cost(const SimState& s) const {
    // Quadratic energy error, aimed a hair above the upright level so the
    // rod arrives with just enough rate to cross into the catch window,
    // plus a soft penalty once the stopping point leaves the margin.
    const double e = pendulum_energy(s, sim_) - params_.energy_offset;
    const double over =
        std::max(0.0, std::abs(stop_point_m(s, brake_accel_)) - params_.track_margin);
    const double deficit = energy_target_ - e;
    return deficit * deficit + params_.margin_weight * over * over;
}

double EnergyOracle::death_value(const SimState& s, int steps_left) const {
    // Leaving the track is graded, not flat: dying later and slower ranks
    // higher, so braking stays preferred even when every branch fails.
    return -1e6 * (steps_left + 1) - 10.0 * std::abs(s.y_dot);
}

double EnergyOracle::swing_return(const SimState& s0, int depth) const {
    if (depth == 0) return -swing_cost(s0);
    double best = -1e18;
    for (int a = 0; a < kNumActions; ++a) {
        const double force = (a - 1) * sim_.motor_force;
        SimState s = s0;
        bool dead = false;
        for (int h = 0; h < params_.swing_hold; ++h) {
            s = integrate(s, force, sim_.step_duration, sim_);
            s.u = wrap_angle_deg(s.u);
            if (std::abs(s.y) > sim_.track_limit_mm) {
                dead = true;
                break;
            }
        }
        best = std::max(best, dead ? death_value(s, depth) : swing_return(s, depth - 1));
    }
    return best;
}

double EnergyOracle::balance_return(const SimState& s0, int depth) const {
    if (depth == 0) {
        // Terminal value: upright, slow, and with a stopping point near the
        // track center.
        const double phi = std::remainder(s0.u * M_PI / 180.0 - M_PI, 2.0 * M_PI);
        const double phi_dot = s0.u_dot * M_PI / 180.0;
        const double y_stop = stop_point_m(s0, brake_accel_);
        return -params_.terminal_angle_weight * (phi * phi + 0.25 * phi_dot * phi_dot) -
               params_.terminal_pos_weight * y_stop * y_stop;
    }
    double best = -1e18;
    for (int a = 0; a < kNumActions; ++a) {
        const double force = (a - 1) * sim_.motor_force;
        SimState s = integrate(s0, force, sim_.step_duration, sim_);
        s.u = wrap_angle_deg(s.u);
        if (std::abs(s.y) > sim_.track_limit_mm) {
            best = std::max(best, -1e6);
            continue;
        }
        best = std::max(best, reward_fn(s, sim_) + balance_return(s, depth - 1));
    }
    return best;
}

Action EnergyOracle::act(const Observation& obs) const {
    for (double x : obs.as_array())
        if (!std::isfinite(x)) throw NumericError("EnergyOracle: non-finite observation");

    // Undo the observation scaling back to ground-truth units.
    const SimState s0{obs.u_norm * 180.0, obs.u_dot_obs * sim_.ang_vel_obs_scale,
                      obs.y_norm * sim_.track_limit_mm, obs.y_dot_obs * sim_.lin_vel_obs_scale};
    const double th_dot = s0.u_dot * M_PI / 180.0;
    // Signed deviation from upright, wrapped to (-pi, pi].
    const double phi = std::remainder(s0.u * M_PI / 180.0 - M_PI, 2.0 * M_PI);

    if (std::abs(phi) < params_.capture_deg * M_PI / 180.0 &&
        std::abs(th_dot) < params_.capture_rate) {
        // Captured: servo on a sliding surface. phi > 0 means the rod leans
        // toward negative y; the cart term is saturated so cart feedback can
        // bias the surface but never dominate the rod terms.
        const double cart = std::clamp(
            params_.pos_gain * s0.y / 1000.0 + params_.vel_gain * s0.y_dot / 1000.0,
            -params_.cart_sat, params_.cart_sat);
        const double sigma = phi + params_.rate_gain * th_dot + cart;
        if (sigma > params_.surface_deadband) return Action::Left;
        if (sigma < -params_.surface_deadband) return Action::Right;
        return Action::NoOp;
    }

    const bool cone = std::abs(phi) < params_.cone_deg * M_PI / 180.0 &&
                      std::abs(th_dot) < params_.cone_rate;
    // Evaluated right-to-left so exact value ties (symmetric states, e.g.
    // hanging rest) kick toward Right.
    int best = static_cast<int>(Action::NoOp);
    double best_value = -1e18;
    for (int a = kNumActions - 1; a >= 0; --a) {
        const double force = (a - 1) * sim_.motor_force;
        SimState s = integrate(s0, force, sim_.step_duration, sim_);
        s.u = wrap_angle_deg(s.u);
        double v;
        if (std::abs(s.y) > sim_.track_limit_mm)
            v = death_value(s, params_.swing_depth + 1);
        else if (cone)
            v = reward_fn(s, sim_) + balance_return(s, params_.balance_horizon - 1);
        else
            v = swing_return(s, params_.swing_depth);
        if (v > best_value + 1e-12) {
            best_value = v;
            best = a;
        }
    }
    return static_cast<Action>(best);
}

MlpPolicy::MlpPolicy(std::vector<MlpLayer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw DimensionError("MlpPolicy: at least one layer required");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        const auto& l = layers_[k];
        if (l.rows <= 0 || l.cols <= 0)
            throw DimensionError("MlpPolicy: layer " + std::to_string(k) +
                                 " has non-positive dimensions");
        if (l.weights.size() != static_cast<std::size_t>(l.rows) * l.cols)
            throw DimensionError("MlpPolicy: layer " + std::to_string(k) +
                                 " weight count does not match rows*cols");
        if (l.bias.size() != static_cast<std::size_t>(l.rows))
            throw DimensionError("MlpPolicy: layer " + std::to_string(k) +
                                 " bias length does not match rows");
        if (k > 0 && l.cols != layers_[k - 1].rows)
            throw DimensionError("MlpPolicy: layer " + std::to_string(k) +
                                 " input dimension does not chain with previous layer");
        for (double w : l.weights)
            if (!std::isfinite(w)) throw NumericError("MlpPolicy: non-finite weight in layer " +
                                                      std::to_string(k));
        for (double b : l.bias)
            if (!std::isfinite(b)) throw NumericError("MlpPolicy: non-finite bias in layer " +
                                                      std::to_string(k));
    }
    if (layers_.front().cols != 4)
        throw DimensionError("MlpPolicy: first layer must take the 4 observables");
    if (layers_.back().rows != 3)
        throw DimensionError("MlpPolicy: last layer must emit 3 action values");
}

std::array<double, 3> MlpPolicy::forward(const Observation& obs) const {
    const auto in = obs.as_array();
    std::vector<double> x(in.begin(), in.end());
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        const auto& l = layers_[k];
        std::vector<double> z(static_cast<std::size_t>(l.rows), 0.0);
        for (int r = 0; r < l.rows; ++r) {
            double acc = l.bias[static_cast<std::size_t>(r)];
            const double* row = &l.weights[static_cast<std::size_t>(r) * l.cols];
            for (int c = 0; c < l.cols; ++c) acc += row[c] * x[static_cast<std::size_t>(c)];
            z[static_cast<std::size_t>(r)] = acc;
        }
        if (k + 1 < layers_.size())
            for (double& v : z) v = std::tanh(v);
        x = std::move(z);
    }
    return {x[0], x[1], x[2]};
}

Action MlpPolicy::act(const Observation& obs) const {
    return static_cast<Action>(argmax3(forward(obs)));
}

int MlpPolicy::count_params() const {
    int n = 0;
    for (const auto& l : layers_) n += l.rows * l.cols + l.rows;
    return n;
}

MlpPolicy MlpPolicy::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("MLP weights: expected a JSON object");
    if (!j.contains("layers") || !j.at("layers").is_array())
        throw SchemaError("MLP weights: missing 'layers' array");
    if (j.value("hidden_activation", "tanh") != std::string("tanh"))
        throw SchemaError("MLP weights: only tanh hidden activation is supported");
    const int input_size = j.value("input_size", 4);
    std::vector<MlpLayer> layers;
    for (const auto& lj : j.at("layers")) {
        if (!lj.is_object() || !lj.contains("rows") || !lj.contains("cols") ||
            !lj.contains("weights") || !lj.contains("bias"))
            throw SchemaError("MLP weights: each layer needs rows, cols, weights, bias");
        MlpLayer l;
        lj.at("rows").get_to(l.rows);
        lj.at("cols").get_to(l.cols);
        lj.at("weights").get_to(l.weights);
        lj.at("bias").get_to(l.bias);
        layers.push_back(std::move(l));
    }
    if (!layers.empty() && layers.front().cols != input_size)
        throw DimensionError("MLP weights: first layer cols does not match input_size");
    return MlpPolicy(std::move(layers));
}

nlohmann::json MlpPolicy::to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_)
        layers.push_back({{"rows", l.rows},
                          {"cols", l.cols},
                          {"weights", l.weights},
                          {"bias", l.bias}});
    return nlohmann::json{{"input_size", layers_.front().cols},
                          {"hidden_activation", "tanh"},
                          {"layers", layers}};
}

MlpPolicy MlpPolicy::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("MLP weights: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("MLP weights: invalid JSON in " + path + ": " + e.what());
    }
    return from_json(j);
}

void MlpPolicy::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("MLP weights: cannot write " + path);
    out << to_json().dump(2) << "\n";
}

}  // namespace cpsu
