// End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
// the process exits nonzero if any criterion fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpsu/distill.hpp"
#include "cpsu/errors.hpp"
#include "cpsu/evalstats.hpp"
#include "cpsu/opct.hpp"
#include "cpsu/policy.hpp"
#include "cpsu/rng.hpp"
#include "cpsu/sim.hpp"

using namespace cpsu;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << name;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << std::endl;
    if (!ok) ++failures;
}

std::vector<MlpLayer> zero_network() {
    return {{64, 4, std::vector<double>(256, 0.0), std::vector<double>(64, 0.0)},
            {64, 64, std::vector<double>(4096, 0.0), std::vector<double>(64, 0.0)},
            {3, 64, std::vector<double>(192, 0.0), std::vector<double>(3, 0.0)}};
}

ObliqueTree full_tree(int depth) {
    const int n_dec = (1 << depth) - 1;
    const int n_leaf = 1 << depth;
    std::vector<ObliqueTree::Node> nodes;
    for (int i = 0; i < n_dec; ++i) {
        ObliqueTree::Node n;
        n.is_leaf = false;
        n.weights = {1.0, 0.0, 0.0, 0.0};
        n.threshold = 0.0;
        n.left = 2 * i + 1;
        n.right = 2 * i + 2;
        nodes.push_back(n);
    }
    for (int i = 0; i < n_leaf; ++i) {
        ObliqueTree::Node n;
        n.is_leaf = true;
        n.distribution = {1.0, 0.0, 0.0};
        nodes.push_back(n);
    }
    return ObliqueTree::from_nodes(std::move(nodes), depth, 0);
}

// Right-leaning chain with the requested number of decision nodes.
ObliqueTree chain_tree(int n_dec) {
    std::vector<ObliqueTree::Node> nodes(static_cast<std::size_t>(2 * n_dec + 1));
    for (int i = 0; i < n_dec; ++i) {
        ObliqueTree::Node& d = nodes[static_cast<std::size_t>(2 * i)];
        d.is_leaf = false;
        d.weights = {1.0, 0.0, 0.0, 0.0};
        d.threshold = static_cast<double>(i);
        d.left = 2 * i + 1;
        d.right = 2 * i + 2;
        ObliqueTree::Node& l = nodes[static_cast<std::size_t>(2 * i + 1)];
        l.is_leaf = true;
        l.distribution = i % 2 ? std::array<double, 3>{0.0, 1.0, 0.0}
                               : std::array<double, 3>{1.0, 0.0, 0.0};
    }
    ObliqueTree::Node& last = nodes.back();
    last.is_leaf = true;
    last.distribution = {0.0, 0.0, 1.0};
    return ObliqueTree::from_nodes(std::move(nodes), n_dec, 0);
}

std::vector<Sample> random_dataset(std::uint64_t seed, int n) {
    Rng rng(seed);
    std::vector<Sample> out;
    for (int i = 0; i < n; ++i) {
        Sample s;
        for (auto& f : s.features) f = rng.gauss();
        const double v = s.features[0] - 0.5 * s.features[1] + 0.25 * s.features[3];
        s.label = v < -0.4 ? 0 : (v < 0.4 ? 1 : 2);
        if (rng.uniform() < 0.05) s.label = rng.uniform_int(3);
        out.push_back(s);
    }
    return out;
}

EpisodeLog synthetic_log(double total_return, int zenith_steps, std::size_t length) {
    EpisodeLog log;
    log.total_return = total_return;
    log.zenith_step_count = zenith_steps;
    if (zenith_steps > 0) log.first_zenith_step = 1;
    log.steps.resize(length);
    return log;
}

std::vector<std::size_t> brute_force_filter(const std::vector<EpisodeLog>& logs) {
    std::vector<std::size_t> with_zenith;
    std::vector<double> returns;
    for (std::size_t i = 0; i < logs.size(); ++i)
        if (logs[i].zenith_step_count > 0) {
            with_zenith.push_back(i);
            returns.push_back(logs[i].total_return);
        }
    std::sort(returns.begin(), returns.end());
    auto quant = [&](double p) {
        const double h = p * static_cast<double>(returns.size() - 1);
        const std::size_t k = static_cast<std::size_t>(h);
        const double f = h - static_cast<double>(k);
        return k + 1 < returns.size() ? returns[k] * (1.0 - f) + returns[k + 1] * f : returns[k];
    };
    const double q1 = quant(0.25), q3 = quant(0.75);
    const double lo = q1 - 1.5 * (q3 - q1), hi = q3 + 1.5 * (q3 - q1);
    std::vector<std::size_t> kept;
    for (std::size_t i : with_zenith)
        if (logs[i].total_return >= lo && logs[i].total_return <= hi) kept.push_back(i);
    return kept;
}

void criterion_1() {
    SimConfig cfg;
    const bool ok = std::abs(reward_fn({180.0, 0.0, 0.0, 0.0}, cfg) - 11.0) < 1e-9 &&
                    std::abs(reward_fn({0.0, 0.0, 55.0, 7.0}, cfg)) < 1e-9 &&
                    std::abs(reward_fn({90.0, 999.0, 0.0, 0.0}, cfg) - 0.5) < 1e-9;
    report(1, "reward formula exactness", ok);
}

void criterion_2() {
    const MlpPolicy mlp(zero_network());
    report(2, "MLP parameter count 4675", mlp.count_params() == 4675,
           std::to_string(mlp.count_params()) + " params");
}

void criterion_3() {
    const auto full = full_tree(10);
    const auto [fd, fl] = full.count_nodes();
    const auto chain = chain_tree(497);
    const auto [cd, cl] = chain.count_nodes();
    const int params = chain.count_params();
    const double reduction = 100.0 * (1.0 - static_cast<double>(params) / 4675.0);
    const bool ok = fd == 1023 && fl == 1024 && cd == 497 && cl == 498 && params == 2983 &&
                    std::abs(reduction - 36.2) <= 0.1;
    char detail[128];
    std::snprintf(detail, sizeof(detail), "full %d/%d, pruned-size %d/%d, %d params, %.2f%%",
                  fd, fl, cd, cl, params, reduction);
    report(3, "tree structure counts and parameter reduction", ok, detail);
}

void criterion_4() {
    bool ok = true;
    std::size_t checked = 0;
    for (std::uint64_t t = 0; t < 50 && ok; ++t) {
        const auto data = random_dataset(t * 31 + 1, 400 + static_cast<int>(t) * 7);
        SplitHyper hyper;
        hyper.restarts = 4;
        hyper.local_search_iters = 12;
        const auto tree = ObliqueTree::train(data, 7, t, hyper);
        const auto pruned = tree.pruned();
        const auto twice = pruned.pruned();
        if (twice.count_params() != pruned.count_params()) ok = false;
        Rng rng(t + 999);
        for (int i = 0; i < 10000 && ok; ++i) {
            const std::array<double, 4> x{2 * rng.gauss(), 2 * rng.gauss(), 2 * rng.gauss(),
                                          2 * rng.gauss()};
            if (tree.predict(x) != pruned.predict(x)) ok = false;
            ++checked;
        }
    }
    report(4, "pruning losslessness on 50 trees x 10^4 observations", ok,
           std::to_string(checked) + " comparisons");
}

void criterion_5() {
    std::size_t base = 0;
    for (int i = 0; i < 92; ++i)
        base += truncate_and_extract(synthetic_log(0.0, 1, 1000), 350).size();

    std::vector<Observation> eval_states;
    for (int e = 0; e < 5; ++e) {
        const auto log = synthetic_log(0.0, 1, 1000);
        const std::size_t n = std::min<std::size_t>(log.steps.size(), 350);
        for (std::size_t i = 0; i < n; ++i) eval_states.push_back(log.steps[i].observation);
    }
    const NoOpPolicy noop;
    const std::size_t added = relabel(eval_states, noop).size();
    report(5, "sample arithmetic: 92x350 = 32200 base, +1750 per iteration",
           base == 32200 && added == 1750,
           std::to_string(base) + " base, " + std::to_string(added) + " added");
}

void criterion_6() {
    Rng rng(2024);
    bool ok = true;
    for (int trial = 0; trial < 200 && ok; ++trial) {
        std::vector<EpisodeLog> logs;
        const int n = 4 + rng.uniform_int(80);
        for (int i = 0; i < n; ++i) {
            double ret = rng.uniform() * 9000.0;
            if (rng.uniform() < 0.12) ret *= 6.0;
            logs.push_back(synthetic_log(ret, rng.uniform() < 0.92 ? 1 : 0, 1));
        }
        const auto want = brute_force_filter(logs);
        try {
            if (filter_episodes(logs).kept != want) ok = false;
        } catch (const EmptyDatasetError&) {
            if (!want.empty()) ok = false;
        }
    }
    report(6, "filtering matches an independent quantile/IQR oracle", ok);
}

void criterion_7() {
    const SimConfig cfg;
    const EnergyOracle oracle(cfg);
    const auto logs = evaluate_policy(oracle, cfg, 20, 777);
    bool all_zenith = true;
    std::vector<double> first;
    for (const auto& log : logs) {
        if (!log.first_zenith_step) {
            all_zenith = false;
        } else {
            first.push_back(static_cast<double>(*log.first_zenith_step));
        }
    }
    const double median_first = first.empty() ? 1e9 : quantile(first, 0.5);
    char detail[96];
    std::snprintf(detail, sizeof(detail), "%zu/20 reached zenith, median first step %.0f",
                  first.size(), median_first);
    report(7, "oracle reaches zenith in all 20 episodes, median first step < 400",
           all_zenith && median_first < 400.0, detail);
}

DistillConfig desk_scale() {
    DistillConfig cfg;
    cfg.base_episodes = 20;
    cfg.n_trees = 5;
    cfg.depth = 8;
    cfg.eval_episodes = 5;
    cfg.iterations = 8;
    cfg.master_seed = 20240815;
    cfg.threads = 4;
    return cfg;
}

// Large enough for the distilled tree to match the teacher; this dominates
// the acceptance runtime (roughly 15-20 minutes single-core).
DistillConfig full_scale() {
    DistillConfig cfg;
    cfg.base_episodes = 100;
    cfg.n_trees = 10;
    cfg.depth = 10;
    cfg.eval_episodes = 10;
    cfg.iterations = 8;
    cfg.master_seed = 20240815;
    cfg.threads = 4;
    return cfg;
}

// Seeded start-state spread; the default reset is exactly centered, which
// would collapse all collection and evaluation episodes into one trajectory
// and make the distillation degenerate.
SimConfig perturbed_sim() {
    SimConfig sim;
    sim.start_perturbation_std = 1.0;
    return sim;
}

void criterion_8() {
    const SimConfig sim = perturbed_sim();
    const DistillConfig cfg = full_scale();
    const EnergyOracle oracle(sim);

    const auto result = run_distillation(cfg, oracle, sim);

    // Fresh seeded episodes, shared by oracle and both trees.
    const std::uint64_t fresh_seed = 424242;
    auto mean_return = [&](const Policy& p) {
        const auto logs = evaluate_policy(p, sim, 20, fresh_seed);
        double sum = 0.0;
        for (const auto& log : logs) sum += log.total_return;
        return sum / static_cast<double>(logs.size());
    };

    const double oracle_mean = mean_return(oracle);
    const TreePolicy final_best(result.best_tree);
    const auto& rec0 = result.records.front();
    const TreePolicy it0_best(result.trees[0][static_cast<std::size_t>(rec0.best_tree_id)]);
    const double final_mean = mean_return(final_best);
    const double it0_mean = mean_return(it0_best);

    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "oracle %.1f, final best %.1f (%.0f%%), iteration-0 best %.1f", oracle_mean,
                  final_mean, 100.0 * final_mean / oracle_mean, it0_mean);
    report(8, "distilled tree reaches >= 90% of oracle return and beats iteration 0",
           final_mean >= 0.9 * oracle_mean && final_mean > it0_mean, detail);
}

void criterion_9() {
    const SimConfig sim = perturbed_sim();
    const DistillConfig cfg = desk_scale();
    const EnergyOracle oracle(sim);

    const auto result = run_distillation(cfg, oracle, sim);
    const auto again = run_distillation(cfg, oracle, sim);
    const std::string m1 = make_manifest(cfg, sim, oracle.name(), result).dump(2);
    const std::string m2 = make_manifest(cfg, sim, oracle.name(), again).dump(2);
    report(9, "repeated runs produce byte-identical manifests", m1 == m2,
           std::to_string(m1.size()) + " bytes");
}

void criterion_10() {
    SimConfig cfg;
    cfg.cart_friction = 0.0;
    cfg.pivot_friction = 0.0;

    SimState s{135.0, 40.0, 100.0, -50.0};
    const double e0 = mechanical_energy(s, cfg);
    for (int i = 0; i < 1000; ++i) s = integrate(s, 0.0, cfg.step_duration, cfg);
    const double drift = std::abs(mechanical_energy(s, cfg) - e0) / e0;

    const double m = cfg.pole_mass, M = cfg.cart_mass, L = cfg.pole_length;
    const double l = L / 2.0, J = m * L * L / 3.0;
    const double L_eff = (J - m * m * l * l / (M + m)) / (m * l);
    const double T_expected = 2.0 * M_PI * std::sqrt(L_eff / cfg.gravity);

    SimState p{2.0, 0.0, 0.0, 0.0};
    const double dt = 0.002;
    double t = 0.0, first_cross = -1.0, last_cross = -1.0, prev_u = p.u;
    int periods = 0;
    while (periods < 11 && t < 40.0) {
        p = integrate(p, 0.0, dt, cfg);
        t += dt;
        if (prev_u > 0.0 && p.u <= 0.0) {
            const double tc = t - dt + dt * prev_u / (prev_u - p.u);
            if (first_cross < 0.0)
                first_cross = tc;
            else
                ++periods;
            last_cross = tc;
        }
        prev_u = p.u;
    }
    const double T_measured = (last_cross - first_cross) / periods;
    const double period_err = std::abs(T_measured - T_expected) / T_expected;

    char detail[96];
    std::snprintf(detail, sizeof(detail), "energy drift %.2e, period error %.3f%%", drift,
                  100.0 * period_err);
    report(10, "energy drift < 1e-5 over 1000 steps, small-angle period within 1%",
           drift < 1e-5 && period_err < 0.01, detail);
}

}  // namespace

int main() {
    try {
        criterion_1();
        criterion_2();
        criterion_3();
        criterion_4();
        criterion_5();
        criterion_6();
        criterion_7();
        criterion_8();
        criterion_9();
        criterion_10();
    } catch (const std::exception& e) {
        std::cerr << "acceptance suite aborted: " << e.what() << std::endl;
        return 2;
    }
    std::cout << (failures ? "ACCEPTANCE: FAILED" : "ACCEPTANCE: ALL CRITERIA PASSED")
              << std::endl;
    return failures ? 1 : 0;
}
