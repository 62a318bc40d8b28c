#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cpsu/distill.hpp"
#include "cpsu/errors.hpp"
#include "cpsu/evalstats.hpp"
#include "cpsu/opct.hpp"
#include "cpsu/policy.hpp"
#include "cpsu/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
    cpsu::SimConfig sim;
    cpsu::DistillConfig distill;
    std::string oracle = "energy";
    std::string output_dir = "out";
    // Flags set on the command line override config-file values.
};

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw cpsu::ConfigError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw cpsu::SchemaError("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    const json j = load_json_file(path);
    if (j.contains("sim")) cfg.sim = cpsu::SimConfig::from_json(j.at("sim"));
    if (j.contains("distill")) cfg.distill = cpsu::DistillConfig::from_json(j.at("distill"));
    if (j.contains("oracle")) j.at("oracle").get_to(cfg.oracle);
    if (j.contains("output_dir")) j.at("output_dir").get_to(cfg.output_dir);
    if (j.contains("master_seed")) j.at("master_seed").get_to(cfg.distill.master_seed);
    return cfg;
}

std::unique_ptr<cpsu::Policy> make_policy(const std::string& spec, const cpsu::SimConfig& sim) {
    if (spec == "energy") return std::make_unique<cpsu::EnergyOracle>(sim);
    if (spec == "noop") return std::make_unique<cpsu::NoOpPolicy>();
    if (spec.rfind("mlp:", 0) == 0)
        return std::make_unique<cpsu::MlpPolicy>(cpsu::MlpPolicy::load(spec.substr(4)));
    if (spec.rfind("tree:", 0) == 0)
        return std::make_unique<cpsu::TreePolicy>(cpsu::ObliqueTree::load(spec.substr(5)));
    throw cpsu::ConfigError("unknown policy '" + spec +
                            "' (expected energy | noop | mlp:<path> | tree:<path>)");
}

void dump_trajectory(const cpsu::Policy& policy, const cpsu::SimConfig& cfg, std::uint64_t seed,
                     const std::string& path) {
    std::ofstream out(path);
    if (!out) throw cpsu::ConfigError("cannot write " + path);
    out << "step,u,u_dot,y,y_dot,action,reward,terminated,truncated,in_zenith\n";
    cpsu::Simulator sim(cfg);
    cpsu::Observation obs = sim.reset(seed);
    int step = 0;
    while (!sim.done()) {
        const cpsu::Action a = policy.act(obs);
        const cpsu::StepResult res = sim.step(a);
        const cpsu::SimState& s = sim.state();
        out << step << "," << cpsu::format_double(s.u) << "," << cpsu::format_double(s.u_dot)
            << "," << cpsu::format_double(s.y) << "," << cpsu::format_double(s.y_dot) << ","
            << static_cast<int>(a) << "," << cpsu::format_double(res.reward) << ","
            << res.terminated << "," << res.truncated << "," << res.in_zenith << "\n";
        obs = res.observation;
        ++step;
    }
}

void print_summary(const cpsu::EvalSummary& s) {
    std::cout << "episodes:            " << s.n << "\n"
              << "return mean +- std:  " << s.mean << " +- " << s.stddev << "\n"
              << "return median:       " << s.median << " (q1 " << s.q1 << ", q3 " << s.q3
              << ")\n"
              << "return min / max:    " << s.min << " / " << s.max << "\n"
              << "return w/o bonus:    " << s.mean_return_no_bonus << "\n"
              << "first zenith step:   mean " << s.mean_first_zenith << ", median "
              << s.median_first_zenith << "\n"
              << "zenith steps:        mean " << s.mean_zenith_steps << ", median "
              << s.median_zenith_steps << "\n";
}

int cmd_simulate(const RunConfig& cfg, const std::string& policy_spec, int episodes,
                 std::uint64_t seed, const std::string& dump_dir) {
    const auto policy = make_policy(policy_spec, cfg.sim);
    const auto logs = cpsu::evaluate_policy(*policy, cfg.sim, episodes, seed);
    std::cout << "episode  seed                  steps  return      zenith_steps  first_zenith\n";
    for (std::size_t i = 0; i < logs.size(); ++i) {
        const auto& log = logs[i];
        std::cout << std::left << std::setw(9) << i << std::setw(22) << log.seed << std::setw(7)
                  << log.steps.size() << std::setw(12) << log.total_return << std::setw(14)
                  << log.zenith_step_count
                  << (log.first_zenith_step ? std::to_string(*log.first_zenith_step) : "-")
                  << "\n";
    }
    if (!dump_dir.empty()) {
        fs::create_directories(dump_dir);
        for (std::size_t i = 0; i < logs.size(); ++i)
            dump_trajectory(*policy, cfg.sim, logs[i].seed,
                            (fs::path(dump_dir) / ("episode" + std::to_string(i) + ".csv")).string());
    }
    return 0;
}

int cmd_distill(const RunConfig& cfg) {
    const auto oracle = make_policy(cfg.oracle, cfg.sim);
    const auto result = cpsu::run_distillation(cfg.distill, *oracle, cfg.sim);

    const fs::path out = cfg.output_dir;
    fs::create_directories(out / "trees");
    for (const auto& rec : result.records)
        for (std::size_t t = 0; t < result.trees[static_cast<std::size_t>(rec.iteration)].size(); ++t)
            result.trees[static_cast<std::size_t>(rec.iteration)][t].save(
                (out / "trees" / ("iter" + std::to_string(rec.iteration) + "_tree" +
                                  std::to_string(t) + ".json")).string());
    result.best_tree.save((out / "trees" / "best.json").string());

    const json manifest = cpsu::make_manifest(cfg.distill, cfg.sim, oracle->name(), result);
    {
        std::ofstream mf(out / "manifest.json");
        if (!mf) throw cpsu::ConfigError("cannot write manifest.json in " + cfg.output_dir);
        mf << manifest.dump(2) << "\n";
    }
    cpsu::write_samples_csv(result.dataset, (out / "samples.csv").string());
    cpsu::export_report(result.records, result.base_logs, (out / "report").string());

    std::cout << "base episodes: " << result.base_logs.size() << " collected, "
              << result.base_filter.kept.size() << " kept ("
              << result.base_filter.rejected_no_zenith.size() << " no-zenith, "
              << result.base_filter.rejected_outlier.size() << " outliers)\n";
    std::cout << "iter  min         median      max         best  dataset\n";
    for (const auto& rec : result.records) {
        std::vector<double> means = rec.mean_returns;
        const double mn = *std::min_element(means.begin(), means.end());
        const double mx = *std::max_element(means.begin(), means.end());
        const double md = cpsu::quantile(means, 0.5);
        std::cout << std::left << std::setw(6) << rec.iteration << std::setw(12) << mn
                  << std::setw(12) << md << std::setw(12) << mx << std::setw(6)
                  << rec.best_tree_id << rec.dataset_size_after << "\n";
    }
    std::cout << "best tree: iteration " << result.best_iteration << ", tree "
              << result.best_tree_id << ", mean return " << result.best_mean_return << "\n"
              << "outputs in " << cfg.output_dir << "\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& policy_spec, int episodes,
                 std::uint64_t seed) {
    const auto policy = make_policy(policy_spec, cfg.sim);
    const auto logs = cpsu::evaluate_policy(*policy, cfg.sim, episodes, seed);
    const auto summary = cpsu::summarize(logs);
    print_summary(summary);
    fs::create_directories(cfg.output_dir);
    std::ofstream out(fs::path(cfg.output_dir) / "summary.json");
    if (!out) throw cpsu::ConfigError("cannot write summary.json in " + cfg.output_dir);
    out << cpsu::summary_to_json(summary).dump(2) << "\n";
    return 0;
}

int cmd_prune(const std::string& in_path, const std::string& out_path, int baseline_params) {
    const auto tree = cpsu::ObliqueTree::load(in_path);
    const auto pruned = tree.pruned();
    pruned.save(out_path);
    const auto [d0, l0] = tree.count_nodes();
    const auto [d1, l1] = pruned.count_nodes();
    const int params = pruned.count_params();
    std::cout << "before: " << d0 << " decision nodes, " << l0 << " leaves, "
              << tree.count_params() << " params\n"
              << "after:  " << d1 << " decision nodes, " << l1 << " leaves, " << params
              << " params\n";
    if (baseline_params > 0) {
        const double reduction = 100.0 * (1.0 - static_cast<double>(params) / baseline_params);
        std::cout << "reduction vs baseline (" << baseline_params << " params): " << std::fixed
                  << std::setprecision(1) << reduction << "%\n";
    }
    return 0;
}

int cmd_report(const std::string& manifest_path, const std::string& out_dir) {
    const json m = load_json_file(manifest_path);
    if (!m.contains("iterations") || !m.contains("base"))
        throw cpsu::SchemaError("manifest missing 'iterations' or 'base': " + manifest_path);

    std::vector<cpsu::IterationRecord> records;
    for (const auto& rj : m.at("iterations")) {
        cpsu::IterationRecord rec;
        rj.at("iteration").get_to(rec.iteration);
        rj.at("mean_returns").get_to(rec.mean_returns);
        rj.at("episode_returns").get_to(rec.episode_returns);
        rj.at("best_tree_id").get_to(rec.best_tree_id);
        rj.at("samples_added").get_to(rec.samples_added);
        rj.at("dataset_size_after").get_to(rec.dataset_size_after);
        records.push_back(std::move(rec));
    }
    std::vector<cpsu::EpisodeLog> oracle_logs;
    const auto& base = m.at("base");
    const auto& returns = base.at("returns");
    const auto& zenith = base.at("zenith_step_counts");
    const auto& first = base.at("first_zenith_steps");
    for (std::size_t i = 0; i < returns.size(); ++i) {
        cpsu::EpisodeLog log;
        log.total_return = returns[i].get<double>();
        log.zenith_step_count = zenith[i].get<int>();
        const int f = first[i].get<int>();
        if (f >= 0) log.first_zenith_step = f;
        oracle_logs.push_back(std::move(log));
    }
    cpsu::export_report(records, oracle_logs, out_dir);
    std::cout << "report written to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cart-pole swing-up oracle-to-decision-tree distillation pipeline"};
    app.require_subcommand(1);

    std::string config_path, policy_spec = "energy", dump_dir, tree_in, tree_out, manifest_path;
    std::string out_dir;
    int episodes = 5;
    std::uint64_t seed = 0;
    bool seed_set = false, out_set = false;
    int threads = 0;
    int baseline_params = 4675;
    int iterations = 0, n_trees = 0, depth = 0, eval_episodes = 0, base_episodes = 0, cutoff = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run configuration file");
        cmd->add_option("--seed", seed, "Master seed")->each([&](const std::string&) { seed_set = true; });
        cmd->add_option("--out", out_dir, "Output directory")->each([&](const std::string&) { out_set = true; });
        cmd->add_option("--threads", threads, "Worker thread cap");
    };

    auto* simulate = app.add_subcommand("simulate", "Play seeded episodes and print returns");
    add_common(simulate);
    simulate->add_option("--policy", policy_spec, "energy | noop | mlp:<path> | tree:<path>");
    simulate->add_option("--episodes", episodes, "Number of episodes")->check(CLI::PositiveNumber);
    simulate->add_option("--dump-trajectories", dump_dir, "Write per-episode CSV files here");

    auto* distill = app.add_subcommand("distill", "Run the iterative distillation loop");
    add_common(distill);
    distill->add_option("--iterations", iterations)->check(CLI::PositiveNumber);
    distill->add_option("--n-trees", n_trees)->check(CLI::PositiveNumber);
    distill->add_option("--depth", depth)->check(CLI::PositiveNumber);
    distill->add_option("--eval-episodes", eval_episodes)->check(CLI::PositiveNumber);
    distill->add_option("--base-episodes", base_episodes)->check(CLI::PositiveNumber);
    distill->add_option("--cutoff", cutoff)->check(CLI::PositiveNumber);
    distill->add_option("--oracle", policy_spec, "Teacher policy (energy | mlp:<path>)");

    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a policy or tree and summarize");
    add_common(evaluate);
    evaluate->add_option("--policy", policy_spec, "energy | noop | mlp:<path> | tree:<path>");
    evaluate->add_option("--episodes", episodes, "Number of episodes")->check(CLI::PositiveNumber);

    auto* prune = app.add_subcommand("prune", "Losslessly prune a serialized tree");
    prune->add_option("--in", tree_in, "Input tree JSON")->required();
    prune->add_option("--out", tree_out, "Output tree JSON")->required();
    prune->add_option("--baseline-params", baseline_params,
                      "Parameter count to report the reduction against");

    auto* report = app.add_subcommand("report", "Regenerate report CSVs from a run manifest");
    report->add_option("--manifest", manifest_path, "Path to manifest.json")->required();
    report->add_option("--out", out_dir, "Output directory")->each([&](const std::string&) { out_set = true; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 1;
    }

    try {
        RunConfig cfg = load_run_config(config_path);
        // CLI flags override config-file values which override defaults.
        if (seed_set) cfg.distill.master_seed = seed;
        if (out_set) cfg.output_dir = out_dir;
        if (threads > 0) cfg.distill.threads = threads;
        if (iterations > 0) cfg.distill.iterations = iterations;
        if (n_trees > 0) cfg.distill.n_trees = n_trees;
        if (depth > 0) cfg.distill.depth = depth;
        if (eval_episodes > 0) cfg.distill.eval_episodes = eval_episodes;
        if (base_episodes > 0) cfg.distill.base_episodes = base_episodes;
        if (cutoff > 0) cfg.distill.cutoff = cutoff;
        if (distill->count("--oracle")) cfg.oracle = policy_spec;
        cfg.sim.validate();

        if (simulate->parsed())
            return cmd_simulate(cfg, policy_spec, episodes, cfg.distill.master_seed, dump_dir);
        if (distill->parsed()) return cmd_distill(cfg);
        if (evaluate->parsed())
            return cmd_evaluate(cfg, policy_spec, episodes, cfg.distill.master_seed);
        if (prune->parsed()) return cmd_prune(tree_in, tree_out, baseline_params);
        if (report->parsed()) return cmd_report(manifest_path, out_dir);
        return 1;
    } catch (const cpsu::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}
