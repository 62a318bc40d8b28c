#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cpsu/evalstats.hpp"
#include "cpsu/opct.hpp"
#include "cpsu/policy.hpp"

namespace cpsu {

struct DistillConfig {
    int n_trees = 10;        // N_T
    int depth = 10;          // d
    int eval_episodes = 5;   // n_e
    int iterations = 10;
    int cutoff = 350;        // t_c
    int base_episodes = 100;
    std::uint64_t master_seed = 0;
    SplitHyper hyper;
    int threads = 1;

    void validate(const SimConfig& sim) const;
    static DistillConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Wraps a trained tree as a policy for evaluation episodes.
class TreePolicy final : public Policy {
public:
    explicit TreePolicy(ObliqueTree tree) : tree_(std::move(tree)) {}
    Action act(const Observation& obs) const override { return tree_.predict(obs); }
    std::string name() const override { return "tree"; }
    const ObliqueTree& tree() const { return tree_; }

private:
    ObliqueTree tree_;
};

/// Append-only labeled dataset with provenance: -1 = base, k >= 0 = added in
/// iteration k.
struct SampleStore {
    std::vector<Sample> samples;
    std::vector<int> provenance;

    void append(const std::vector<Sample>& batch, int origin);
    std::size_t size() const { return samples.size(); }
};

struct FilterResult {
    std::vector<std::size_t> kept;
    std::vector<std::size_t> rejected_no_zenith;
    std::vector<std::size_t> rejected_outlier;
};

struct IterationRecord {
    int iteration = 0;
    std::vector<std::uint64_t> tree_seeds;             // pre-assigned, one per tree
    std::vector<std::uint64_t> eval_seeds;             // shared by all trees this iteration
    std::vector<double> mean_returns;                  // per tree
    std::vector<std::vector<double>> episode_returns;  // per tree, per episode
    int best_tree_id = 0;
    std::size_t samples_added = 0;
    std::size_t dataset_size_after = 0;
};

struct DistillResult {
    ObliqueTree best_tree;
    int best_iteration = 0;
    int best_tree_id = 0;
    double best_mean_return = 0.0;
    std::vector<IterationRecord> records;
    std::vector<std::vector<ObliqueTree>> trees;  // [iteration][tree]
    std::vector<EpisodeLog> base_logs;            // the oracle's collection episodes
    FilterResult base_filter;
    SampleStore dataset;
};

/// Oracle evaluation episodes that seed the base dataset.
std::vector<EpisodeLog> collect_base(const Policy& oracle, const SimConfig& cfg, int episodes,
                                     std::uint64_t seed);

/// Drop episodes that never reach the zenith, then drop return outliers
/// outside [Q1 - 1.5 IQR, Q3 + 1.5 IQR] of the survivors. Throws
/// EmptyDatasetError when nothing remains.
FilterResult filter_episodes(const std::vector<EpisodeLog>& logs);

/// First min(t_c, length) (observation, action) pairs of the episode.
std::vector<Sample> truncate_and_extract(const EpisodeLog& log, int t_c);

/// Label each state with the oracle's action, order preserved.
std::vector<Sample> relabel(const std::vector<Observation>& states, const Policy& oracle);

/// The full iterative loop: train N_T trees, evaluate on shared seeded
/// episodes, relabel the best tree's visited states with the oracle, append,
/// repeat. Pure function of (config, oracle, sim config).
DistillResult run_distillation(const DistillConfig& cfg, const Policy& oracle,
                               const SimConfig& sim);

/// Run manifest: config echo, per-iteration records, relative tree paths.
nlohmann::json make_manifest(const DistillConfig& cfg, const SimConfig& sim,
                             const std::string& oracle_name, const DistillResult& result);

/// CSV dump: u_norm,u_dot_obs,y_norm,y_dot_obs,action,provenance
void write_samples_csv(const SampleStore& store, const std::string& path);

}  // namespace cpsu
