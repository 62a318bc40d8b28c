#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cpsu/policy.hpp"
#include "cpsu/sim.hpp"

namespace cpsu {

struct IterationRecord;  // distill.hpp

struct EpisodeStep {
    Observation observation;
    Action action = Action::NoOp;
    double reward = 0.0;
    bool in_zenith = false;
};

struct EpisodeLog {
    std::vector<EpisodeStep> steps;
    double total_return = 0.0;
    std::optional<int> first_zenith_step;  // 0-based step index
    int zenith_step_count = 0;
    std::uint64_t seed = 0;
    bool terminated = false;
    bool truncated = false;
};

/// Play one full episode of the policy in a fresh simulator.
EpisodeLog run_episode(const Policy& policy, const SimConfig& cfg, std::uint64_t seed);

/// n seeded episodes; episode seeds are derived deterministically from seed.
std::vector<EpisodeLog> evaluate_policy(const Policy& policy, const SimConfig& cfg, int n,
                                        std::uint64_t seed);

/// Quantile by linear interpolation between order statistics, the single
/// convention used by episode filtering and the boxplot export.
double quantile(std::vector<double> values, double p);

struct EvalSummary {
    int n = 0;
    double mean = 0.0, stddev = 0.0;  // sample std, n-1 denominator; 0 for n=1
    double median = 0.0, q1 = 0.0, q3 = 0.0, min = 0.0, max = 0.0;
    double mean_first_zenith = -1.0;    // over episodes that reached it; -1 if none
    double median_first_zenith = -1.0;
    double mean_zenith_steps = 0.0;
    double median_zenith_steps = 0.0;
    double mean_return_no_bonus = 0.0;
};

EvalSummary summarize(const std::vector<EpisodeLog>& logs);
nlohmann::json summary_to_json(const EvalSummary& s);

struct Histogram {
    double lo = 0.0, hi = 0.0, width = 0.0;
    std::vector<std::size_t> counts;
};

/// bin_count = 0 selects Freedman-Diaconis binning.
Histogram make_histogram(const std::vector<double>& values, int bin_count = 0);

/// Write iterations.csv, summary.json, histogram_*.csv and boxplot.csv
/// (groups: oracle / iteration-0 best / final best) into out_dir.
/// Throws before creating any file if records or oracle logs are empty.
void export_report(const std::vector<IterationRecord>& records,
                   const std::vector<EpisodeLog>& oracle_logs, const std::string& out_dir);

/// Shortest exact decimal representation helper used by all CSV writers.
std::string format_double(double v);

}  // namespace cpsu
