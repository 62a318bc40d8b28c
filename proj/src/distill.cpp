#include "cpsu/distill.hpp"

#include <algorithm>
#include <fstream>
#include <future>

#include <nlohmann/json.hpp>

#include "cpsu/errors.hpp"
#include "cpsu/rng.hpp"

namespace cpsu {

void DistillConfig::validate(const SimConfig& sim) const {
    if (n_trees < 1) throw ConfigError("DistillConfig: n_trees must be >= 1");
    if (depth < 1 || depth > 20) throw ConfigError("DistillConfig: depth must be in 1..20");
    if (eval_episodes < 1) throw ConfigError("DistillConfig: eval_episodes must be >= 1");
    if (iterations < 1) throw ConfigError("DistillConfig: iterations must be >= 1");
    if (cutoff < 1) throw ConfigError("DistillConfig: cutoff must be >= 1");
    if (cutoff > sim.max_steps)
        throw ConfigError("DistillConfig: cutoff must not exceed the episode step limit");
    if (base_episodes < 1) throw ConfigError("DistillConfig: base_episodes must be >= 1");
    if (threads < 1) throw ConfigError("DistillConfig: threads must be >= 1");
}

DistillConfig DistillConfig::from_json(const nlohmann::json& j) {
    DistillConfig cfg;
    if (!j.is_object()) throw SchemaError("DistillConfig: expected a JSON object");
    auto get = [&](const char* key, auto& out) {
        if (j.contains(key)) j.at(key).get_to(out);
    };
    get("n_trees", cfg.n_trees);
    get("depth", cfg.depth);
    get("eval_episodes", cfg.eval_episodes);
    get("iterations", cfg.iterations);
    get("cutoff", cfg.cutoff);
    get("base_episodes", cfg.base_episodes);
    get("master_seed", cfg.master_seed);
    get("threads", cfg.threads);
    get("restarts", cfg.hyper.restarts);
    get("init_jitter", cfg.hyper.init_jitter);
    get("min_samples_split", cfg.hyper.min_samples_split);
    get("local_search_iters", cfg.hyper.local_search_iters);
    return cfg;
}

nlohmann::json DistillConfig::to_json() const {
    return nlohmann::json{{"n_trees", n_trees},
                          {"depth", depth},
                          {"eval_episodes", eval_episodes},
                          {"iterations", iterations},
                          {"cutoff", cutoff},
                          {"base_episodes", base_episodes},
                          {"master_seed", master_seed},
                          {"threads", threads},
                          {"restarts", hyper.restarts},
                          {"init_jitter", hyper.init_jitter},
                          {"min_samples_split", hyper.min_samples_split},
                          {"local_search_iters", hyper.local_search_iters}};
}

void SampleStore::append(const std::vector<Sample>& batch, int origin) {
    samples.insert(samples.end(), batch.begin(), batch.end());
    provenance.insert(provenance.end(), batch.size(), origin);
}

std::vector<EpisodeLog> collect_base(const Policy& oracle, const SimConfig& cfg, int episodes,
                                     std::uint64_t seed) {
    if (episodes < 1) throw ConfigError("collect_base: episode count must be >= 1");
    std::vector<EpisodeLog> logs;
    logs.reserve(static_cast<std::size_t>(episodes));
    for (int i = 0; i < episodes; ++i)
        logs.push_back(run_episode(oracle, cfg, mix_seed(seed, 0xba5e, static_cast<std::uint64_t>(i))));
    return logs;
}

FilterResult filter_episodes(const std::vector<EpisodeLog>& logs) {
    if (logs.empty()) throw ConfigError("filter_episodes: no episodes");
    FilterResult res;
    std::vector<std::size_t> with_zenith;
    for (std::size_t i = 0; i < logs.size(); ++i) {
        if (logs[i].zenith_step_count == 0)
            res.rejected_no_zenith.push_back(i);
        else
            with_zenith.push_back(i);
    }
    if (with_zenith.empty())
        throw EmptyDatasetError("filter_episodes: every episode was rejected (no zenith)");

    std::vector<double> returns;
    for (std::size_t i : with_zenith) returns.push_back(logs[i].total_return);
    const double q1 = quantile(returns, 0.25);
    const double q3 = quantile(returns, 0.75);
    const double iqr = q3 - q1;
    const double lo = q1 - 1.5 * iqr;
    const double hi = q3 + 1.5 * iqr;
    for (std::size_t i : with_zenith) {
        if (logs[i].total_return < lo || logs[i].total_return > hi)
            res.rejected_outlier.push_back(i);
        else
            res.kept.push_back(i);
    }
    if (res.kept.empty())
        throw EmptyDatasetError("filter_episodes: every episode was rejected");
    return res;
}

std::vector<Sample> truncate_and_extract(const EpisodeLog& log, int t_c) {
    if (t_c < 1) throw ConfigError("truncate_and_extract: t_c must be >= 1");
    const std::size_t n = std::min(log.steps.size(), static_cast<std::size_t>(t_c));
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.push_back({log.steps[i].observation.as_array(), static_cast<int>(log.steps[i].action)});
    return out;
}

std::vector<Sample> relabel(const std::vector<Observation>& states, const Policy& oracle) {
    std::vector<Sample> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back({s.as_array(), static_cast<int>(oracle.act(s))});
    return out;
}

namespace {

struct TreeEval {
    ObliqueTree tree;
    std::vector<EpisodeLog> logs;
    std::vector<double> returns;
    double mean_return = 0.0;
};

TreeEval train_and_evaluate(const std::vector<Sample>& dataset, const DistillConfig& cfg,
                            const SimConfig& sim, std::uint64_t tree_seed,
                            const std::vector<std::uint64_t>& eval_seeds) {
    TreeEval ev{ObliqueTree::train(dataset, cfg.depth, tree_seed, cfg.hyper), {}, {}, 0.0};
    TreePolicy policy(ev.tree);
    for (std::uint64_t es : eval_seeds) {
        ev.logs.push_back(run_episode(policy, sim, es));
        ev.returns.push_back(ev.logs.back().total_return);
        ev.mean_return += ev.logs.back().total_return;
    }
    ev.mean_return /= static_cast<double>(eval_seeds.size());
    return ev;
}

}  // namespace

DistillResult run_distillation(const DistillConfig& cfg, const Policy& oracle,
                               const SimConfig& sim) {
    cfg.validate(sim);
    sim.validate();

    DistillResult result;
    result.base_logs = collect_base(oracle, sim, cfg.base_episodes,
                                    mix_seed(cfg.master_seed, 0xc011));
    result.base_filter = filter_episodes(result.base_logs);
    for (std::size_t i : result.base_filter.kept)
        result.dataset.append(truncate_and_extract(result.base_logs[i], cfg.cutoff), -1);

    double best_mean = 0.0;
    int best_params = 0;
    bool have_best = false;

    for (int k = 0; k < cfg.iterations; ++k) {
        IterationRecord rec;
        rec.iteration = k;
        for (int t = 0; t < cfg.n_trees; ++t)
            rec.tree_seeds.push_back(mix_seed(cfg.master_seed, 0x7e31,
                                              static_cast<std::uint64_t>(k) * 1000 + t));
        // Same episodes for every tree within an iteration, fresh ones per
        // iteration.
        for (int e = 0; e < cfg.eval_episodes; ++e)
            rec.eval_seeds.push_back(mix_seed(cfg.master_seed, 0xe7a1,
                                              static_cast<std::uint64_t>(k) * 1000 + e));

        const std::vector<Sample> snapshot = result.dataset.samples;
        std::vector<TreeEval> evals;
        evals.reserve(static_cast<std::size_t>(cfg.n_trees));
        if (cfg.threads > 1) {
            std::vector<std::future<TreeEval>> futures;
            for (int t = 0; t < cfg.n_trees; ++t)
                futures.push_back(std::async(std::launch::async, train_and_evaluate,
                                             std::cref(snapshot), std::cref(cfg), std::cref(sim),
                                             rec.tree_seeds[static_cast<std::size_t>(t)],
                                             std::cref(rec.eval_seeds)));
            for (auto& f : futures) evals.push_back(f.get());
        } else {
            for (int t = 0; t < cfg.n_trees; ++t)
                evals.push_back(train_and_evaluate(snapshot, cfg, sim,
                                                   rec.tree_seeds[static_cast<std::size_t>(t)],
                                                   rec.eval_seeds));
        }

        int best_t = 0;
        for (int t = 1; t < cfg.n_trees; ++t) {
            const auto& a = evals[static_cast<std::size_t>(t)];
            const auto& b = evals[static_cast<std::size_t>(best_t)];
            if (a.mean_return > b.mean_return ||
                (a.mean_return == b.mean_return &&
                 a.tree.count_params() < b.tree.count_params()))
                best_t = t;  // remaining ties resolve to the lower seed index
        }

        for (auto& ev : evals) {
            rec.mean_returns.push_back(ev.mean_return);
            rec.episode_returns.push_back(ev.returns);
        }
        rec.best_tree_id = best_t;

        // Relabel the best tree's visited states (first t_c steps of each
        // evaluation episode) with the oracle and grow the dataset.
        std::vector<Observation> visited;
        for (const auto& log : evals[static_cast<std::size_t>(best_t)].logs) {
            const std::size_t n = std::min(log.steps.size(), static_cast<std::size_t>(cfg.cutoff));
            for (std::size_t i = 0; i < n; ++i) visited.push_back(log.steps[i].observation);
        }
        const auto added = relabel(visited, oracle);
        result.dataset.append(added, k);
        rec.samples_added = added.size();
        rec.dataset_size_after = result.dataset.size();

        const auto& winner = evals[static_cast<std::size_t>(best_t)];
        if (!have_best || winner.mean_return > best_mean ||
            (winner.mean_return == best_mean && winner.tree.count_params() < best_params)) {
            have_best = true;
            best_mean = winner.mean_return;
            best_params = winner.tree.count_params();
            result.best_tree = winner.tree;
            result.best_iteration = k;
            result.best_tree_id = best_t;
            result.best_mean_return = winner.mean_return;
        }

        std::vector<ObliqueTree> iteration_trees;
        for (auto& ev : evals) iteration_trees.push_back(std::move(ev.tree));
        result.trees.push_back(std::move(iteration_trees));
        result.records.push_back(std::move(rec));
    }
    return result;
}

nlohmann::json make_manifest(const DistillConfig& cfg, const SimConfig& sim,
                             const std::string& oracle_name, const DistillResult& result) {
    nlohmann::json j;
    j["config"] = {{"sim", sim.to_json()}, {"distill", cfg.to_json()}, {"oracle", oracle_name}};
    nlohmann::json base_returns = nlohmann::json::array();
    nlohmann::json base_zenith = nlohmann::json::array();
    nlohmann::json base_first = nlohmann::json::array();
    for (const auto& log : result.base_logs) {
        base_returns.push_back(log.total_return);
        base_zenith.push_back(log.zenith_step_count);
        base_first.push_back(log.first_zenith_step ? *log.first_zenith_step : -1);
    }
    j["base"] = {{"episodes", result.base_logs.size()},
                 {"kept", result.base_filter.kept.size()},
                 {"rejected_no_zenith", result.base_filter.rejected_no_zenith.size()},
                 {"rejected_outlier", result.base_filter.rejected_outlier.size()},
                 {"returns", base_returns},
                 {"zenith_step_counts", base_zenith},
                 {"first_zenith_steps", base_first}};
    nlohmann::json its = nlohmann::json::array();
    for (const auto& rec : result.records) {
        nlohmann::json files = nlohmann::json::array();
        for (std::size_t t = 0; t < rec.mean_returns.size(); ++t)
            files.push_back("trees/iter" + std::to_string(rec.iteration) + "_tree" +
                            std::to_string(t) + ".json");
        its.push_back({{"iteration", rec.iteration},
                       {"tree_seeds", rec.tree_seeds},
                       {"eval_seeds", rec.eval_seeds},
                       {"mean_returns", rec.mean_returns},
                       {"episode_returns", rec.episode_returns},
                       {"best_tree_id", rec.best_tree_id},
                       {"samples_added", rec.samples_added},
                       {"dataset_size_after", rec.dataset_size_after},
                       {"tree_files", files}});
    }
    j["iterations"] = its;
    j["best"] = {{"iteration", result.best_iteration},
                 {"tree_id", result.best_tree_id},
                 {"mean_return", result.best_mean_return},
                 {"file", "trees/best.json"}};
    return j;
}

void write_samples_csv(const SampleStore& store, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("write_samples_csv: cannot write " + path);
    out << "u_norm,u_dot_obs,y_norm,y_dot_obs,action,provenance\n";
    for (std::size_t i = 0; i < store.samples.size(); ++i) {
        const auto& s = store.samples[i];
        out << format_double(s.features[0]) << "," << format_double(s.features[1]) << ","
            << format_double(s.features[2]) << "," << format_double(s.features[3]) << ","
            << s.label << "," << store.provenance[i] << "\n";
    }
}

}  // namespace cpsu
