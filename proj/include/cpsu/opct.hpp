#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cpsu/sim.hpp"

namespace cpsu {

struct Sample {
    std::array<double, 4> features{};
    int label = 0;  // action index 0..2
};

struct SplitHyper {
    int restarts = 10;
    double init_jitter = 0.1;
    int min_samples_split = 8;
    int local_search_iters = 40;
    double search_step = 0.4;       // initial perturbation scale of the local search
    double search_decay = 0.93;     // per-iteration shrink of the perturbation scale
};

struct SplitResult {
    std::array<double, 4> weights{};
    double threshold = 0.0;
    double gini = 1.0;  // weighted Gini of the induced partition
    bool valid = false;
};

/// Gini impurity of a label multiset given per-class counts.
double gini_impurity(const std::array<std::size_t, 3>& counts);

/// Best oblique split over R random restarts: weights start as normalized
/// class-centroid differences plus jitter, then hill-climb on random
/// directions; thresholds are scanned over midpoints of sorted projections.
/// Returns valid=false when no split strictly reduces impurity.
SplitResult fit_split(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                      std::uint64_t seed, const SplitHyper& hyper);

/// Oblique decision tree over 4-d observations with 3-class action leaves.
/// Immutable after training; prediction is thread-safe.
class ObliqueTree {
public:
    struct Node {
        bool is_leaf = true;
        std::array<double, 4> weights{};
        double threshold = 0.0;
        int left = -1;   // node index, leaves: -1
        int right = -1;
        std::array<double, 3> distribution{};
        std::size_t sample_count = 0;  // training samples that reached this leaf
    };

    /// Greedy top-down training. Pure function of (dataset order, depth,
    /// seed, hyper); leaves hold Laplace-smoothed label distributions.
    static ObliqueTree train(const std::vector<Sample>& dataset, int depth, std::uint64_t seed,
                             const SplitHyper& hyper = {});

    /// Route by w.x <= threshold (boundary goes left) down to a leaf, then
    /// argmax of the leaf distribution, lowest index on ties.
    Action predict(const std::array<double, 4>& features) const;
    Action predict(const Observation& obs) const { return predict(obs.as_array()); }

    /// Lossless argmax pruning: collapse every subtree whose leaves agree on
    /// the predicted action into one leaf. Prediction is unchanged everywhere.
    ObliqueTree pruned() const;

    /// (decision_count, leaf_count)
    std::pair<int, int> count_nodes() const;

    /// 5 per decision node (4 weights + threshold), 1 per leaf (its action).
    int count_params() const;

    int depth_limit() const { return depth_limit_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t training_size() const { return training_size_; }
    int max_depth() const;  // longest root-to-leaf path (edges)

    const std::vector<Node>& nodes() const { return nodes_; }

    nlohmann::json to_json() const;
    static ObliqueTree from_json(const nlohmann::json& j);
    static ObliqueTree load(const std::string& path);
    void save(const std::string& path) const;

    /// Test hook for hand-constructed trees; validates structure.
    static ObliqueTree from_nodes(std::vector<Node> nodes, int depth_limit, std::uint64_t seed);

    /// An empty placeholder; every accessor other than nodes() is invalid
    /// until a trained or deserialized tree is assigned over it.
    ObliqueTree() = default;

private:
    void validate() const;

    std::vector<Node> nodes_;  // index 0 is the root
    int depth_limit_ = 0;
    std::uint64_t seed_ = 0;
    std::size_t training_size_ = 0;
};

}  // namespace cpsu
