#include "cpsu/opct.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cpsu/errors.hpp"
#include "cpsu/rng.hpp"

namespace cpsu {

namespace {

constexpr double kImpurityEps = 1e-12;

double dot4(const std::array<double, 4>& w, const std::array<double, 4>& x) {
    return w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + w[3] * x[3];
}

bool normalize4(std::array<double, 4>& w) {
    double n = std::sqrt(dot4(w, w));
    if (!(n > 1e-12)) return false;
    for (double& v : w) v /= n;
    return true;
}

// Best threshold for fixed weights: scan midpoints of the sorted projections.
// Returns {threshold, weighted gini}; gini > 1 if no cut point exists.
std::pair<double, double> best_threshold(const std::vector<Sample>& samples,
                                         const std::vector<std::size_t>& idx,
                                         const std::array<double, 4>& w,
                                         std::vector<std::pair<double, int>>& proj) {
    proj.clear();
    proj.reserve(idx.size());
    for (std::size_t i : idx) proj.emplace_back(dot4(w, samples[i].features), samples[i].label);
    std::sort(proj.begin(), proj.end());

    const std::size_t n = proj.size();
    std::array<std::size_t, 3> left{0, 0, 0}, right{0, 0, 0};
    for (const auto& p : proj) ++right[static_cast<std::size_t>(p.second)];

    double best_gini = 2.0;
    double best_thr = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto lab = static_cast<std::size_t>(proj[i].second);
        ++left[lab];
        --right[lab];
        if (proj[i].first == proj[i + 1].first) continue;  // no cut between equal projections
        const double nl = static_cast<double>(i + 1);
        const double nr = static_cast<double>(n - i - 1);
        const double g = (nl * gini_impurity(left) + nr * gini_impurity(right)) /
                         static_cast<double>(n);
        if (g < best_gini) {
            best_gini = g;
            best_thr = 0.5 * (proj[i].first + proj[i + 1].first);
        }
    }
    return {best_thr, best_gini};
}

int argmax_dist(const std::array<double, 3>& d) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
        if (d[static_cast<std::size_t>(i)] > d[static_cast<std::size_t>(best)]) best = i;
    return best;
}

std::array<std::size_t, 3> label_counts(const std::vector<Sample>& samples,
                                        const std::vector<std::size_t>& idx) {
    std::array<std::size_t, 3> c{0, 0, 0};
    for (std::size_t i : idx) {
        int lab = samples[i].label;
        if (lab < 0 || lab >= kNumActions)
            throw ConfigError("opct: sample label out of range 0..2");
        ++c[static_cast<std::size_t>(lab)];
    }
    return c;
}

}  // namespace

double gini_impurity(const std::array<std::size_t, 3>& counts) {
    const double n = static_cast<double>(counts[0] + counts[1] + counts[2]);
    if (n == 0.0) return 0.0;
    double s = 0.0;
    for (std::size_t c : counts) {
        const double p = static_cast<double>(c) / n;
        s += p * p;
    }
    return 1.0 - s;
}

SplitResult fit_split(const std::vector<Sample>& raw_samples, const std::vector<std::size_t>& raw_idx,
                      std::uint64_t seed, const SplitHyper& hyper) {
    SplitResult best;
    const auto parent_counts = label_counts(raw_samples, raw_idx);
    const double parent_gini = gini_impurity(parent_counts);

    std::vector<int> classes;
    for (int c = 0; c < kNumActions; ++c)
        if (parent_counts[static_cast<std::size_t>(c)] > 0) classes.push_back(c);
    if (classes.size() < 2 || raw_idx.size() < 2) return best;

    // Standardize features over this node's samples before searching. The
    // isotropic random perturbations of the hill-climb otherwise struggle to
    // reach the strongly anisotropic weight ratios that near-pure nodes need
    // (one feature may vary 40x less than another within a node). The final
    // split is mapped back to raw feature space, so the tree itself is
    // unaffected by the transform.
    std::array<double, 4> mean{}, scale{};
    for (std::size_t i : raw_idx)
        for (int k = 0; k < 4; ++k)
            mean[static_cast<std::size_t>(k)] += raw_samples[i].features[static_cast<std::size_t>(k)];
    for (auto& v : mean) v /= static_cast<double>(raw_idx.size());
    for (std::size_t i : raw_idx)
        for (int k = 0; k < 4; ++k) {
            const double d = raw_samples[i].features[static_cast<std::size_t>(k)] - mean[static_cast<std::size_t>(k)];
            scale[static_cast<std::size_t>(k)] += d * d;
        }
    for (auto& v : scale) v = std::max(std::sqrt(v / static_cast<double>(raw_idx.size())), 1e-9);

    std::vector<Sample> samples;
    samples.reserve(raw_idx.size());
    for (std::size_t i : raw_idx) {
        Sample z = raw_samples[i];
        for (int k = 0; k < 4; ++k)
            z.features[static_cast<std::size_t>(k)] =
                (z.features[static_cast<std::size_t>(k)] - mean[static_cast<std::size_t>(k)]) /
                scale[static_cast<std::size_t>(k)];
        samples.push_back(z);
    }
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});

    std::array<std::array<double, 4>, 3> centroid{};
    for (std::size_t i : idx) {
        auto& c = centroid[static_cast<std::size_t>(samples[i].label)];
        for (int k = 0; k < 4; ++k) c[static_cast<std::size_t>(k)] += samples[i].features[static_cast<std::size_t>(k)];
    }
    for (int lab : classes) {
        const double n = static_cast<double>(parent_counts[static_cast<std::size_t>(lab)]);
        for (auto& v : centroid[static_cast<std::size_t>(lab)]) v /= n;
    }

    Rng rng(mix_seed(seed, 0x0bc7));
    std::vector<std::pair<double, int>> scratch;

    for (int r = 0; r < hyper.restarts; ++r) {
        // Init: normalized difference of two class centroids, plus jitter.
        const int a = classes[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(classes.size())))];
        int b = a;
        while (b == a) b = classes[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(classes.size())))];
        std::array<double, 4> w;
        for (int k = 0; k < 4; ++k)
            w[static_cast<std::size_t>(k)] = centroid[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)] -
                                             centroid[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)];
        if (!normalize4(w)) {
            for (auto& v : w) v = rng.gauss();
            normalize4(w);
        }
        for (auto& v : w) v += hyper.init_jitter * rng.gauss();
        if (!normalize4(w)) continue;

        auto [thr, gini] = best_threshold(samples, idx, w, scratch);
        // Hill-climb on random perturbations with a shrinking step.
        double step = hyper.search_step;
        for (int it = 0; it < hyper.local_search_iters; ++it) {
            std::array<double, 4> cand = w;
            for (auto& v : cand) v += step * rng.gauss();
            step *= hyper.search_decay;
            if (!normalize4(cand)) continue;
            auto [cthr, cgini] = best_threshold(samples, idx, cand, scratch);
            if (cgini < gini) {
                w = cand;
                thr = cthr;
                gini = cgini;
            }
        }
        if (gini < best.gini || !best.valid) {
            best.weights = w;
            best.threshold = thr;
            best.gini = gini;
            best.valid = true;
        }
    }

    // A split must strictly reduce impurity, otherwise the node stays a leaf.
    if (!best.valid || !(best.gini < parent_gini - kImpurityEps)) best.valid = false;

    // Map the winning standardized split w·z <= t back to raw features.
    if (best.valid) {
        double shift = 0.0;
        for (int k = 0; k < 4; ++k) {
            auto ks = static_cast<std::size_t>(k);
            best.weights[ks] /= scale[ks];
            shift += best.weights[ks] * mean[ks];
        }
        best.threshold += shift;
        const double n = std::sqrt(dot4(best.weights, best.weights));
        if (n > 1e-12) {
            for (auto& v : best.weights) v /= n;
            best.threshold /= n;
        }
    }
    return best;
}

ObliqueTree ObliqueTree::train(const std::vector<Sample>& dataset, int depth, std::uint64_t seed,
                               const SplitHyper& hyper) {
    if (dataset.empty()) throw ConfigError("ObliqueTree::train: empty dataset");
    if (depth < 1 || depth > 20) throw ConfigError("ObliqueTree::train: depth must be in 1..20");

    ObliqueTree tree;
    tree.depth_limit_ = depth;
    tree.seed_ = seed;
    tree.training_size_ = dataset.size();

    Rng node_seeds(mix_seed(seed, 0x7ee5));

    // DFS build; node split seeds are drawn in visit order, so the result is
    // a pure function of (dataset order, depth, seed, hyper).
    auto build = [&](auto&& self, const std::vector<std::size_t>& idx, int level) -> int {
        const int me = static_cast<int>(tree.nodes_.size());
        tree.nodes_.emplace_back();

        const auto counts = label_counts(dataset, idx);
        const bool pure = (counts[0] == idx.size()) || (counts[1] == idx.size()) ||
                          (counts[2] == idx.size());

        SplitResult split;
        if (level < depth && !pure &&
            idx.size() >= static_cast<std::size_t>(hyper.min_samples_split))
            split = fit_split(dataset, idx, node_seeds.next_u64(), hyper);

        if (!split.valid) {
            Node& n = tree.nodes_[static_cast<std::size_t>(me)];
            n.is_leaf = true;
            n.sample_count = idx.size();
            const double denom = static_cast<double>(idx.size()) + 3.0;
            for (int c = 0; c < 3; ++c)
                n.distribution[static_cast<std::size_t>(c)] =
                    (static_cast<double>(counts[static_cast<std::size_t>(c)]) + 1.0) / denom;
            return me;
        }

        std::vector<std::size_t> left_idx, right_idx;
        for (std::size_t i : idx) {
            if (dot4(split.weights, dataset[i].features) <= split.threshold)
                left_idx.push_back(i);
            else
                right_idx.push_back(i);
        }
        const int l = self(self, left_idx, level + 1);
        const int r = self(self, right_idx, level + 1);
        Node& n = tree.nodes_[static_cast<std::size_t>(me)];
        n.is_leaf = false;
        n.weights = split.weights;
        n.threshold = split.threshold;
        n.left = l;
        n.right = r;
        return me;
    };

    std::vector<std::size_t> all(dataset.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    build(build, all, 0);
    return tree;
}

Action ObliqueTree::predict(const std::array<double, 4>& features) const {
    int i = 0;
    while (!nodes_[static_cast<std::size_t>(i)].is_leaf) {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        i = dot4(n.weights, features) <= n.threshold ? n.left : n.right;
    }
    return static_cast<Action>(argmax_dist(nodes_[static_cast<std::size_t>(i)].distribution));
}

ObliqueTree ObliqueTree::pruned() const {
    struct Agg {
        bool uniform;
        int action;
        std::array<double, 3> weighted_sum;
        double weight;
    };

    auto aggregate = [&](auto&& self, int i) -> Agg {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.is_leaf) {
            // Deserialized trees carry no sample counts; fall back to weight 1.
            const double w = n.sample_count > 0 ? static_cast<double>(n.sample_count) : 1.0;
            Agg a{true, argmax_dist(n.distribution), {}, w};
            for (int c = 0; c < 3; ++c)
                a.weighted_sum[static_cast<std::size_t>(c)] = w * n.distribution[static_cast<std::size_t>(c)];
            return a;
        }
        Agg l = self(self, n.left);
        Agg r = self(self, n.right);
        Agg a;
        a.uniform = l.uniform && r.uniform && l.action == r.action;
        a.action = l.action;
        a.weight = l.weight + r.weight;
        for (int c = 0; c < 3; ++c)
            a.weighted_sum[static_cast<std::size_t>(c)] =
                l.weighted_sum[static_cast<std::size_t>(c)] + r.weighted_sum[static_cast<std::size_t>(c)];
        return a;
    };

    ObliqueTree out;
    out.depth_limit_ = depth_limit_;
    out.seed_ = seed_;
    out.training_size_ = training_size_;

    auto rebuild = [&](auto&& self, int i) -> int {
        const Agg a = aggregate(aggregate, i);
        const int me = static_cast<int>(out.nodes_.size());
        out.nodes_.emplace_back();
        if (a.uniform) {
            Node& n = out.nodes_[static_cast<std::size_t>(me)];
            n.is_leaf = true;
            for (int c = 0; c < 3; ++c)
                n.distribution[static_cast<std::size_t>(c)] =
                    a.weighted_sum[static_cast<std::size_t>(c)] / a.weight;
            n.sample_count = static_cast<std::size_t>(a.weight);
            return me;
        }
        const Node& src = nodes_[static_cast<std::size_t>(i)];
        const int l = self(self, src.left);
        const int r = self(self, src.right);
        Node& n = out.nodes_[static_cast<std::size_t>(me)];
        n.is_leaf = false;
        n.weights = src.weights;
        n.threshold = src.threshold;
        n.left = l;
        n.right = r;
        return me;
    };
    rebuild(rebuild, 0);
    return out;
}

std::pair<int, int> ObliqueTree::count_nodes() const {
    int decisions = 0, leaves = 0;
    for (const Node& n : nodes_)
        n.is_leaf ? ++leaves : ++decisions;
    return {decisions, leaves};
}

int ObliqueTree::count_params() const {
    auto [d, l] = count_nodes();
    return 5 * d + l;
}

int ObliqueTree::max_depth() const {
    auto depth = [&](auto&& self, int i) -> int {
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.is_leaf) return 0;
        return 1 + std::max(self(self, n.left), self(self, n.right));
    };
    return depth(depth, 0);
}

nlohmann::json ObliqueTree::to_json() const {
    nlohmann::json nodes = nlohmann::json::array();
    for (const Node& n : nodes_) {
        if (n.is_leaf) {
            nodes.push_back({{"kind", "leaf"}, {"distribution", n.distribution}});
        } else {
            nodes.push_back({{"kind", "split"},
                             {"weights", n.weights},
                             {"threshold", n.threshold},
                             {"left", n.left},
                             {"right", n.right}});
        }
    }
    return nlohmann::json{{"version", 1},
                          {"depth_limit", depth_limit_},
                          {"seed", seed_},
                          {"nodes", nodes}};
}

ObliqueTree ObliqueTree::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("tree: expected a JSON object");
    if (!j.contains("version")) throw SchemaError("tree: missing 'version'");
    if (j.at("version") != 1)
        throw SchemaError("tree: unsupported version " + j.at("version").dump());
    if (!j.contains("nodes") || !j.at("nodes").is_array() || j.at("nodes").empty())
        throw SchemaError("tree: missing or empty 'nodes' array");

    ObliqueTree tree;
    tree.depth_limit_ = j.value("depth_limit", 0);
    tree.seed_ = j.value("seed", std::uint64_t{0});
    std::size_t k = 0;
    for (const auto& nj : j.at("nodes")) {
        const std::string where = "nodes[" + std::to_string(k++) + "]";
        Node n;
        const std::string kind = nj.value("kind", "");
        if (kind == "leaf") {
            if (!nj.contains("distribution"))
                throw SchemaError("tree: " + where + " missing 'distribution'");
            nj.at("distribution").get_to(n.distribution);
            n.is_leaf = true;
        } else if (kind == "split") {
            for (const char* key : {"weights", "threshold", "left", "right"})
                if (!nj.contains(key))
                    throw SchemaError("tree: " + where + " missing '" + key + "'");
            nj.at("weights").get_to(n.weights);
            nj.at("threshold").get_to(n.threshold);
            nj.at("left").get_to(n.left);
            nj.at("right").get_to(n.right);
            n.is_leaf = false;
        } else {
            throw SchemaError("tree: " + where + " has unknown kind '" + kind + "'");
        }
        tree.nodes_.push_back(std::move(n));
    }
    tree.validate();
    return tree;
}

void ObliqueTree::validate() const {
    const int n = static_cast<int>(nodes_.size());
    std::vector<int> referenced(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        const Node& node = nodes_[static_cast<std::size_t>(i)];
        if (node.is_leaf) {
            double sum = 0.0;
            for (double p : node.distribution) {
                if (!(p >= 0.0)) throw SchemaError("tree: negative leaf probability");
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-9)
                throw SchemaError("tree: leaf distribution does not sum to 1");
        } else {
            bool all_zero = true;
            for (double w : node.weights) {
                if (!std::isfinite(w)) throw SchemaError("tree: non-finite split weight");
                all_zero = all_zero && w == 0.0;
            }
            if (all_zero) throw SchemaError("tree: split weights are all zero");
            for (int child : {node.left, node.right}) {
                if (child < 0 || child >= n)
                    throw SchemaError("tree: child index out of range at node " + std::to_string(i));
                if (child == 0 || referenced[static_cast<std::size_t>(child)]++)
                    throw SchemaError("tree: node " + std::to_string(child) +
                                      " referenced more than once or is the root");
            }
        }
    }
    for (int i = 1; i < n; ++i)
        if (!referenced[static_cast<std::size_t>(i)])
            throw SchemaError("tree: node " + std::to_string(i) + " is unreachable");
}

ObliqueTree ObliqueTree::from_nodes(std::vector<Node> nodes, int depth_limit, std::uint64_t seed) {
    ObliqueTree tree;
    tree.nodes_ = std::move(nodes);
    tree.depth_limit_ = depth_limit;
    tree.seed_ = seed;
    tree.validate();
    return tree;
}

ObliqueTree ObliqueTree::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("tree: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("tree: invalid JSON in " + path + ": " + e.what());
    }
    return from_json(j);
}

void ObliqueTree::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("tree: cannot write " + path);
    out << to_json().dump(2) << "\n";
}

}  // namespace cpsu
