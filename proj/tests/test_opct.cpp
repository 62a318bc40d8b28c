#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include <nlohmann/json.hpp>

#include "cpsu/errors.hpp"
#include "cpsu/opct.hpp"
#include "cpsu/rng.hpp"

using namespace cpsu;

namespace {

std::vector<std::size_t> all_indices(const std::vector<Sample>& s) {
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

// Two Gaussian blobs separable by x0 + x1 = 0.
std::vector<Sample> separable_blobs(std::uint64_t seed, int n_per_class) {
    Rng rng(seed);
    std::vector<Sample> out;
    for (int i = 0; i < n_per_class; ++i) {
        out.push_back({{1.0 + 0.3 * rng.gauss(), 1.0 + 0.3 * rng.gauss(), 0.3 * rng.gauss(),
                        0.3 * rng.gauss()},
                       0});
        out.push_back({{-1.0 + 0.3 * rng.gauss(), -1.0 + 0.3 * rng.gauss(), 0.3 * rng.gauss(),
                        0.3 * rng.gauss()},
                       2});
    }
    return out;
}

std::vector<Sample> random_dataset(std::uint64_t seed, int n) {
    Rng rng(seed);
    std::vector<Sample> out;
    for (int i = 0; i < n; ++i) {
        Sample s;
        for (auto& f : s.features) f = rng.gauss();
        // Label by a noisy oblique rule so trees have structure to find.
        const double v = s.features[0] - 0.5 * s.features[1] + 0.25 * s.features[2];
        s.label = v < -0.4 ? 0 : (v < 0.4 ? 1 : 2);
        if (rng.uniform() < 0.05) s.label = rng.uniform_int(3);
        out.push_back(s);
    }
    return out;
}

double training_accuracy(const ObliqueTree& t, const std::vector<Sample>& data) {
    std::size_t ok = 0;
    for (const auto& s : data)
        if (static_cast<int>(t.predict(s.features)) == s.label) ++ok;
    return static_cast<double>(ok) / static_cast<double>(data.size());
}

bool same_structure(const ObliqueTree& a, const ObliqueTree& b) {
    const auto& na = a.nodes();
    const auto& nb = b.nodes();
    if (na.size() != nb.size()) return false;
    for (std::size_t i = 0; i < na.size(); ++i) {
        if (na[i].is_leaf != nb[i].is_leaf) return false;
        if (na[i].is_leaf) {
            if (na[i].distribution != nb[i].distribution) return false;
        } else {
            if (na[i].weights != nb[i].weights || na[i].threshold != nb[i].threshold ||
                na[i].left != nb[i].left || na[i].right != nb[i].right)
                return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("single-label dataset collapses to one leaf") {
    std::vector<Sample> data(50, Sample{{0.1, 0.2, 0.3, 0.4}, 1});
    const auto t = ObliqueTree::train(data, 10, 1);
    const auto [d, l] = t.count_nodes();
    CHECK(d == 0);
    CHECK(l == 1);
    CHECK(t.predict(std::array<double, 4>{9.0, 9.0, 9.0, 9.0}) == Action::NoOp);
}

TEST_CASE("linearly separable clusters reach perfect accuracy at depth 1") {
    const auto data = separable_blobs(3, 100);
    const auto t = ObliqueTree::train(data, 1, 7);
    CHECK(training_accuracy(t, data) == 1.0);
    CHECK(t.max_depth() <= 1);
}

TEST_CASE("training is a pure function of dataset, depth and seed") {
    const auto data = random_dataset(11, 400);
    const auto a = ObliqueTree::train(data, 5, 1);
    const auto b = ObliqueTree::train(data, 5, 1);
    const auto c = ObliqueTree::train(data, 5, 2);
    CHECK(same_structure(a, b));
    // Different seeds are allowed to differ (and generally do).
    CHECK_FALSE(same_structure(a, c));
}

TEST_CASE("train rejects bad inputs") {
    CHECK_THROWS_AS(ObliqueTree::train({}, 5, 0), ConfigError);
    CHECK_THROWS_AS(ObliqueTree::train(random_dataset(1, 10), 0, 0), ConfigError);
    CHECK_THROWS_AS(ObliqueTree::train(random_dataset(1, 10), 21, 0), ConfigError);
}

TEST_CASE("identical features with mixed labels degenerate to a single leaf") {
    std::vector<Sample> data;
    for (int i = 0; i < 30; ++i) data.push_back({{1.0, 1.0, 1.0, 1.0}, i % 3});
    const auto t = ObliqueTree::train(data, 10, 5);
    const auto [d, l] = t.count_nodes();
    CHECK(d == 0);
    CHECK(l == 1);
}

TEST_CASE("fit_split separates a two-point dataset perfectly") {
    std::vector<Sample> data{{{0.0, 0.0, 0.0, 0.0}, 0}, {{1.0, 0.0, 0.0, 0.0}, 2}};
    const auto split = fit_split(data, all_indices(data), 1, SplitHyper{});
    REQUIRE(split.valid);
    CHECK(split.gini == doctest::Approx(0.0).epsilon(1e-12));
    const bool left0 = data[0].features[0] * split.weights[0] <= split.threshold;
    const bool left1 = data[1].features[0] * split.weights[0] <= split.threshold;
    CHECK(left0 != left1);
}

TEST_CASE("XOR is not linearly separable: residual impurity stays positive") {
    std::vector<Sample> data;
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        const double a = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const double b = rng.uniform() < 0.5 ? -1.0 : 1.0;
        data.push_back({{a, b, 0.0, 0.0}, a * b > 0 ? 0 : 2});
    }
    const auto split = fit_split(data, all_indices(data), 3, SplitHyper{});
    if (split.valid) CHECK(split.gini > 0.1);
}

TEST_CASE("more restarts never hurt on the same seed stream") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto data = random_dataset(seed + 500, 120);
        SplitHyper one;
        one.restarts = 1;
        SplitHyper five;
        five.restarts = 5;
        const auto r1 = fit_split(data, all_indices(data), seed, one);
        const auto r5 = fit_split(data, all_indices(data), seed, five);
        REQUIRE(r1.valid);
        REQUIRE(r5.valid);
        CHECK(r5.gini <= r1.gini);
    }
}

TEST_CASE("accepted splits strictly reduce impurity") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto data = random_dataset(seed + 900, 150);
        std::array<std::size_t, 3> counts{0, 0, 0};
        for (const auto& s : data) ++counts[static_cast<std::size_t>(s.label)];
        const double parent = gini_impurity(counts);
        const auto split = fit_split(data, all_indices(data), seed, SplitHyper{});
        if (split.valid) CHECK(split.gini < parent);
    }
}

TEST_CASE("prediction follows argmax with lowest-index tie-break") {
    ObliqueTree::Node leaf;
    leaf.is_leaf = true;
    leaf.distribution = {0.2, 0.5, 0.3};
    auto t = ObliqueTree::from_nodes({leaf}, 1, 0);
    CHECK(t.predict(std::array<double, 4>{0.0, 0.0, 0.0, 0.0}) == Action::NoOp);

    leaf.distribution = {0.5, 0.5, 0.0};
    auto t2 = ObliqueTree::from_nodes({leaf}, 1, 0);
    CHECK(t2.predict(std::array<double, 4>{1.0, 2.0, 3.0, 4.0}) == Action::Left);
}

TEST_CASE("pruning collapses agreeing leaves (footnote example)") {
    ObliqueTree::Node split;
    split.is_leaf = false;
    split.weights = {1.0, 0.0, 0.0, 0.0};
    split.threshold = 0.0;
    split.left = 1;
    split.right = 2;
    ObliqueTree::Node l1, l2;
    l1.is_leaf = true;
    l1.distribution = {0.8, 0.1, 0.1};
    l1.sample_count = 10;
    l2.is_leaf = true;
    l2.distribution = {0.7, 0.2, 0.1};
    l2.sample_count = 30;
    const auto t = ObliqueTree::from_nodes({split, l1, l2}, 1, 0);
    const auto p = t.pruned();
    const auto [d, l] = p.count_nodes();
    CHECK(d == 0);
    CHECK(l == 1);
    CHECK(p.predict(std::array<double, 4>{-5.0, 0.0, 0.0, 0.0}) == Action::Left);
    // Sample-weighted mean of the collapsed distributions.
    CHECK(p.nodes()[0].distribution[0] == doctest::Approx(0.725));
    CHECK(p.nodes()[0].distribution[1] == doctest::Approx(0.175));
}

TEST_CASE("pruning leaves disagreeing splits alone") {
    ObliqueTree::Node split;
    split.is_leaf = false;
    split.weights = {1.0, 0.0, 0.0, 0.0};
    split.threshold = 0.0;
    split.left = 1;
    split.right = 2;
    ObliqueTree::Node l1, l2;
    l1.is_leaf = true;
    l1.distribution = {0.9, 0.05, 0.05};
    l2.is_leaf = true;
    l2.distribution = {0.1, 0.1, 0.8};
    const auto t = ObliqueTree::from_nodes({split, l1, l2}, 1, 0);
    const auto p = t.pruned();
    const auto [d, l] = p.count_nodes();
    CHECK(d == 1);
    CHECK(l == 2);
}

TEST_CASE("pruning properties on trained trees") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto data = random_dataset(seed + 40, 600);
        const auto t = ObliqueTree::train(data, 8, seed);
        const auto p = t.pruned();

        const auto [dt, lt] = t.count_nodes();
        const auto [dp, lp] = p.count_nodes();
        CHECK(lt == dt + 1);
        CHECK(lp == dp + 1);
        CHECK(p.count_params() <= t.count_params());
        CHECK(t.max_depth() <= 8);

        Rng rng(seed);
        for (int i = 0; i < 10000; ++i) {
            std::array<double, 4> x{rng.gauss() * 2, rng.gauss() * 2, rng.gauss() * 2,
                                    rng.gauss() * 2};
            CHECK(t.predict(x) == p.predict(x));
        }
        // Idempotence.
        const auto pp = p.pruned();
        CHECK(same_structure(p, pp));
    }
}

TEST_CASE("serialization round-trips structure and predictions") {
    const auto data = random_dataset(123, 500);
    const auto t = ObliqueTree::train(data, 6, 9);
    const auto back = ObliqueTree::from_json(t.to_json());
    CHECK(back.depth_limit() == t.depth_limit());
    CHECK(back.seed() == t.seed());
    CHECK(same_structure(t, back));
    Rng rng(0);
    for (int i = 0; i < 2000; ++i) {
        std::array<double, 4> x{rng.gauss(), rng.gauss(), rng.gauss(), rng.gauss()};
        CHECK(t.predict(x) == back.predict(x));
    }
}

TEST_CASE("schema validation rejects malformed documents") {
    const auto data = random_dataset(5, 100);
    const auto t = ObliqueTree::train(data, 4, 0);

    nlohmann::json missing_child = t.to_json();
    bool patched = false;
    for (auto& n : missing_child["nodes"]) {
        if (n["kind"] == "split") {
            n.erase("left");
            patched = true;
            break;
        }
    }
    REQUIRE(patched);
    CHECK_THROWS_AS(ObliqueTree::from_json(missing_child), SchemaError);

    nlohmann::json bad_version = t.to_json();
    bad_version["version"] = 2;
    CHECK_THROWS_WITH_AS(ObliqueTree::from_json(bad_version),
                         doctest::Contains("unsupported version"), SchemaError);

    nlohmann::json no_nodes = t.to_json();
    no_nodes["nodes"] = nlohmann::json::array();
    CHECK_THROWS_AS(ObliqueTree::from_json(no_nodes), SchemaError);

    nlohmann::json bad_dist = t.to_json();
    for (auto& n : bad_dist["nodes"]) {
        if (n["kind"] == "leaf") {
            n["distribution"] = {0.5, 0.5, 0.5};
            break;
        }
    }
    CHECK_THROWS_AS(ObliqueTree::from_json(bad_dist), SchemaError);
}

TEST_CASE("full and chain trees report the documented counts") {
    // Fully populated depth-3 tree: 7 decisions, 8 leaves.
    std::vector<ObliqueTree::Node> nodes;
    for (int i = 0; i < 7; ++i) {
        ObliqueTree::Node n;
        n.is_leaf = false;
        n.weights = {1.0, 0.0, 0.0, 0.0};
        n.threshold = 0.0;
        n.left = 2 * i + 1;
        n.right = 2 * i + 2;
        nodes.push_back(n);
    }
    for (int i = 0; i < 8; ++i) {
        ObliqueTree::Node n;
        n.is_leaf = true;
        n.distribution = {1.0, 0.0, 0.0};
        nodes.push_back(n);
    }
    const auto t = ObliqueTree::from_nodes(std::move(nodes), 3, 0);
    const auto [d, l] = t.count_nodes();
    CHECK(d == 7);
    CHECK(l == 8);
    CHECK(t.count_params() == 7 * 5 + 8);
}
