#include "cpsu/sim.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "cpsu/errors.hpp"

namespace cpsu {

namespace {

constexpr double kDegToRad = M_PI / 180.0;

// Internal SI state: theta (rad, 0 = hanging down), theta_dot (rad/s),
// y (m), y_dot (m/s).
struct SiState {
    double th, th_dot, y, y_dot;
};

SiState to_si(const SimState& s) {
    return {s.u * kDegToRad, s.u_dot * kDegToRad, s.y / 1000.0, s.y_dot / 1000.0};
}

SimState from_si(const SiState& s) {
    return {s.th / kDegToRad, s.th_dot / kDegToRad, s.y * 1000.0, s.y_dot * 1000.0};
}

// Cart (mass M) with a uniform rod (mass m, length L) pivoting at the cart.
// CoM at L/2, moment of inertia about the pivot J = m L^2 / 3.
//   (M+m) y'' + m l cos(th) th'' = F - c_y y' + m l th'^2 sin(th)
//   J th'' + m l cos(th) y''    = -c_p th' - m g l sin(th)
SiState derivatives(const SiState& s, double force, const SimConfig& cfg) {
    const double m = cfg.pole_mass;
    const double M = cfg.cart_mass;
    const double l = cfg.pole_length / 2.0;
    const double J = m * cfg.pole_length * cfg.pole_length / 3.0;
    const double c = std::cos(s.th);
    const double sn = std::sin(s.th);

    const double a11 = M + m;
    const double a12 = m * l * c;
    const double a22 = J;
    const double b1 = force - cfg.cart_friction * s.y_dot + m * l * s.th_dot * s.th_dot * sn;
    const double b2 = -cfg.pivot_friction * s.th_dot - m * cfg.gravity * l * sn;

    const double det = a11 * a22 - a12 * a12;  // > 0 for physical parameters
    const double y_dd = (a22 * b1 - a12 * b2) / det;
    const double th_dd = (a11 * b2 - a12 * b1) / det;

    return {s.th_dot, th_dd, s.y_dot, y_dd};
}

SiState rk4_step(const SiState& s, double force, double h, const SimConfig& cfg) {
    auto add = [](const SiState& a, const SiState& b, double f) {
        return SiState{a.th + f * b.th, a.th_dot + f * b.th_dot, a.y + f * b.y,
                       a.y_dot + f * b.y_dot};
    };
    SiState k1 = derivatives(s, force, cfg);
    SiState k2 = derivatives(add(s, k1, h / 2.0), force, cfg);
    SiState k3 = derivatives(add(s, k2, h / 2.0), force, cfg);
    SiState k4 = derivatives(add(s, k3, h), force, cfg);
    SiState out = s;
    out.th += h / 6.0 * (k1.th + 2.0 * k2.th + 2.0 * k3.th + k4.th);
    out.th_dot += h / 6.0 * (k1.th_dot + 2.0 * k2.th_dot + 2.0 * k3.th_dot + k4.th_dot);
    out.y += h / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y);
    out.y_dot += h / 6.0 * (k1.y_dot + 2.0 * k2.y_dot + 2.0 * k3.y_dot + k4.y_dot);
    return out;
}

bool finite(const SimState& s) {
    return std::isfinite(s.u) && std::isfinite(s.u_dot) && std::isfinite(s.y) &&
           std::isfinite(s.y_dot);
}

}  // namespace

void SimConfig::validate() const {
    if (pole_length <= 0.0) throw ConfigError("SimConfig: pole_length must be > 0");
    if (cart_mass <= 0.0 || pole_mass <= 0.0) throw ConfigError("SimConfig: masses must be > 0");
    if (step_duration <= 0.0) throw ConfigError("SimConfig: step_duration must be > 0");
    if (integrator_substeps < 1) throw ConfigError("SimConfig: integrator_substeps must be >= 1");
    if (track_limit_mm <= 0.0) throw ConfigError("SimConfig: track_limit_mm must be > 0");
    if (max_steps < 1) throw ConfigError("SimConfig: max_steps must be >= 1");
    if (ang_vel_obs_scale <= 0.0 || lin_vel_obs_scale <= 0.0)
        throw ConfigError("SimConfig: observable scales must be > 0");
    if (action_delay_steps < 0) throw ConfigError("SimConfig: action_delay_steps must be >= 0");
    for (double s : sensor_noise_std)
        if (s < 0.0) throw ConfigError("SimConfig: sensor_noise_std must be >= 0");
}

SimConfig SimConfig::from_json(const nlohmann::json& j) {
    SimConfig cfg;
    if (!j.is_object()) throw SchemaError("SimConfig: expected a JSON object");
    auto get = [&](const char* key, auto& out) {
        if (j.contains(key)) j.at(key).get_to(out);
    };
    get("pole_length", cfg.pole_length);
    get("cart_mass", cfg.cart_mass);
    get("pole_mass", cfg.pole_mass);
    get("gravity", cfg.gravity);
    get("motor_force", cfg.motor_force);
    get("cart_friction", cfg.cart_friction);
    get("pivot_friction", cfg.pivot_friction);
    get("step_duration", cfg.step_duration);
    get("integrator_substeps", cfg.integrator_substeps);
    get("track_limit_mm", cfg.track_limit_mm);
    get("max_steps", cfg.max_steps);
    get("ang_vel_safety_limit", cfg.ang_vel_safety_limit);
    get("sensor_noise_std", cfg.sensor_noise_std);
    get("action_delay_steps", cfg.action_delay_steps);
    get("start_perturbation_std", cfg.start_perturbation_std);
    get("ang_vel_obs_scale", cfg.ang_vel_obs_scale);
    get("lin_vel_obs_scale", cfg.lin_vel_obs_scale);
    cfg.validate();
    return cfg;
}

nlohmann::json SimConfig::to_json() const {
    return nlohmann::json{{"pole_length", pole_length},
                          {"cart_mass", cart_mass},
                          {"pole_mass", pole_mass},
                          {"gravity", gravity},
                          {"motor_force", motor_force},
                          {"cart_friction", cart_friction},
                          {"pivot_friction", pivot_friction},
                          {"step_duration", step_duration},
                          {"integrator_substeps", integrator_substeps},
                          {"track_limit_mm", track_limit_mm},
                          {"max_steps", max_steps},
                          {"ang_vel_safety_limit", ang_vel_safety_limit},
                          {"sensor_noise_std", sensor_noise_std},
                          {"action_delay_steps", action_delay_steps},
                          {"start_perturbation_std", start_perturbation_std},
                          {"ang_vel_obs_scale", ang_vel_obs_scale},
                          {"lin_vel_obs_scale", lin_vel_obs_scale}};
}

double wrap_angle_deg(double u) {
    double w = std::remainder(u, 360.0);
    if (w <= -180.0) w = 180.0;
    return w;
}

double reward_fn(const SimState& state, const SimConfig& cfg) {
    const double angle_term = 0.5 * (1.0 - std::cos(state.u * M_PI / 180.0));
    double pos_term = std::cos(M_PI / 2.0 * state.y / cfg.track_limit_mm);
    if (pos_term < 0.0) pos_term = 0.0;  // only reachable past the track limit
    const double bonus = is_zenith(state, cfg) ? 10.0 : 0.0;
    return angle_term * pos_term + bonus;
}

bool is_zenith(const SimState& state, const SimConfig& cfg) {
    const double u_norm = state.u / 180.0;
    const double u_dot_obs = state.u_dot / cfg.ang_vel_obs_scale;
    return std::abs(u_norm) > 175.0 / 180.0 && std::abs(u_dot_obs) < 6.0 / 40.0;
}

SimState integrate(const SimState& state, double force, double dt, const SimConfig& cfg) {
    if (dt <= 0.0) throw ConfigError("integrate: dt must be > 0");
    if (!finite(state)) throw NumericError("integrate: non-finite state");
    SiState s = to_si(state);
    // Fixed substep duration (step_duration / substeps) so that integrating
    // dt in one call or in pieces visits the same grid.
    const double h0 = cfg.step_duration / cfg.integrator_substeps;
    const int n = std::max(1, static_cast<int>(std::ceil(dt / h0 - 1e-12)));
    const double h = dt / n;
    for (int i = 0; i < n; ++i) s = rk4_step(s, force, h, cfg);
    SimState out = from_si(s);
    if (!finite(out)) throw NumericError("integrate: integration diverged to non-finite state");
    return out;
}

double mechanical_energy(const SimState& state, const SimConfig& cfg) {
    const SiState s = to_si(state);
    const double m = cfg.pole_mass;
    const double M = cfg.cart_mass;
    const double l = cfg.pole_length / 2.0;
    const double J = m * cfg.pole_length * cfg.pole_length / 3.0;
    return 0.5 * (M + m) * s.y_dot * s.y_dot + m * l * s.y_dot * s.th_dot * std::cos(s.th) +
           0.5 * J * s.th_dot * s.th_dot + m * cfg.gravity * l * (1.0 - std::cos(s.th));
}

double pendulum_energy(const SimState& state, const SimConfig& cfg) {
    const SiState s = to_si(state);
    const double m = cfg.pole_mass;
    const double l = cfg.pole_length / 2.0;
    const double J = m * cfg.pole_length * cfg.pole_length / 3.0;
    return 0.5 * J * s.th_dot * s.th_dot + m * cfg.gravity * l * (1.0 - std::cos(s.th));
}

Simulator::Simulator(SimConfig cfg) : cfg_(cfg), rng_(0) {
    cfg_.validate();
}

Observation Simulator::reset(std::uint64_t seed) {
    rng_ = Rng(mix_seed(seed, 0x5149));
    state_ = SimState{};
    if (cfg_.start_perturbation_std > 0.0) {
        state_.u = cfg_.start_perturbation_std * rng_.gauss();
        state_.u_dot = cfg_.start_perturbation_std * rng_.gauss();
        state_.y = cfg_.start_perturbation_std * rng_.gauss();
        state_.y_dot = cfg_.start_perturbation_std * rng_.gauss();
    }
    delay_queue_.assign(static_cast<std::size_t>(cfg_.action_delay_steps), Action::NoOp);
    step_count_ = 0;
    done_ = false;
    started_ = true;
    return noisy_observation();
}

Observation Simulator::observe() const {
    return Observation{state_.u / 180.0, state_.u_dot / cfg_.ang_vel_obs_scale,
                       state_.y / cfg_.track_limit_mm, state_.y_dot / cfg_.lin_vel_obs_scale};
}

Observation Simulator::noisy_observation() {
    Observation obs = observe();
    bool any = false;
    for (double s : cfg_.sensor_noise_std) any = any || s > 0.0;
    if (any) {
        obs.u_norm += cfg_.sensor_noise_std[0] * rng_.gauss();
        obs.u_dot_obs += cfg_.sensor_noise_std[1] * rng_.gauss();
        obs.y_norm += cfg_.sensor_noise_std[2] * rng_.gauss();
        obs.y_dot_obs += cfg_.sensor_noise_std[3] * rng_.gauss();
    }
    return obs;
}

StepResult Simulator::step(Action action) {
    if (!started_) throw Error("Simulator::step called before reset");
    if (done_) throw Error("Simulator::step called on a finished episode");

    Action effective = action;
    if (cfg_.action_delay_steps > 0) {
        delay_queue_.push_back(action);
        effective = delay_queue_.front();
        delay_queue_.pop_front();
    }

    const double force = (static_cast<int>(effective) - 1) * cfg_.motor_force;
    state_ = integrate(state_, force, cfg_.step_duration, cfg_);
    state_.u = wrap_angle_deg(state_.u);
    ++step_count_;

    StepResult res;
    res.in_zenith = is_zenith(state_, cfg_);
    res.reward = reward_fn(state_, cfg_);

    const bool track_violation = std::abs(state_.y) > cfg_.track_limit_mm;
    const bool speed_violation =
        std::abs(state_.u_dot / cfg_.ang_vel_obs_scale) > cfg_.ang_vel_safety_limit;
    // Safety termination takes precedence over the step-count truncation.
    if (track_violation || speed_violation) {
        res.terminated = true;
    } else if (step_count_ >= cfg_.max_steps) {
        res.truncated = true;
    }
    done_ = res.terminated || res.truncated;
    res.observation = noisy_observation();
    return res;
}

}  // namespace cpsu
