#include "cpsu/evalstats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cpsu/distill.hpp"
#include "cpsu/errors.hpp"
#include "cpsu/rng.hpp"

namespace cpsu {

EpisodeLog run_episode(const Policy& policy, const SimConfig& cfg, std::uint64_t seed) {
    Simulator sim(cfg);
    EpisodeLog log;
    log.seed = seed;
    Observation obs = sim.reset(seed);
    while (!sim.done()) {
        const Action a = policy.act(obs);
        const StepResult res = sim.step(a);
        log.steps.push_back({obs, a, res.reward, res.in_zenith});
        log.total_return += res.reward;
        if (res.in_zenith) {
            ++log.zenith_step_count;
            if (!log.first_zenith_step)
                log.first_zenith_step = static_cast<int>(log.steps.size()) - 1;
        }
        log.terminated = res.terminated;
        log.truncated = res.truncated;
        obs = res.observation;
    }
    return log;
}

std::vector<EpisodeLog> evaluate_policy(const Policy& policy, const SimConfig& cfg, int n,
                                        std::uint64_t seed) {
    if (n < 1) throw ConfigError("evaluate_policy: episode count must be >= 1");
    std::vector<EpisodeLog> logs;
    logs.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        logs.push_back(run_episode(policy, cfg, mix_seed(seed, 0xe9a1, static_cast<std::uint64_t>(i))));
    return logs;
}

double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw ConfigError("quantile: empty input");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= values.size()) return values.back();
    const double frac = h - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

EvalSummary summarize(const std::vector<EpisodeLog>& logs) {
    if (logs.empty()) throw ConfigError("summarize: empty input");
    EvalSummary s;
    s.n = static_cast<int>(logs.size());

    std::vector<double> returns, zenith_steps, first_zenith;
    double no_bonus_sum = 0.0;
    for (const auto& log : logs) {
        returns.push_back(log.total_return);
        zenith_steps.push_back(static_cast<double>(log.zenith_step_count));
        if (log.first_zenith_step) first_zenith.push_back(static_cast<double>(*log.first_zenith_step));
        no_bonus_sum += log.total_return - 10.0 * log.zenith_step_count;
    }

    double sum = 0.0;
    for (double r : returns) sum += r;
    s.mean = sum / s.n;
    if (s.n > 1) {
        double ss = 0.0;
        for (double r : returns) ss += (r - s.mean) * (r - s.mean);
        s.stddev = std::sqrt(ss / (s.n - 1));
    }
    s.median = quantile(returns, 0.5);
    s.q1 = quantile(returns, 0.25);
    s.q3 = quantile(returns, 0.75);
    s.min = *std::min_element(returns.begin(), returns.end());
    s.max = *std::max_element(returns.begin(), returns.end());

    double zsum = 0.0;
    for (double z : zenith_steps) zsum += z;
    s.mean_zenith_steps = zsum / s.n;
    s.median_zenith_steps = quantile(zenith_steps, 0.5);
    if (!first_zenith.empty()) {
        double fsum = 0.0;
        for (double f : first_zenith) fsum += f;
        s.mean_first_zenith = fsum / static_cast<double>(first_zenith.size());
        s.median_first_zenith = quantile(first_zenith, 0.5);
    }
    s.mean_return_no_bonus = no_bonus_sum / s.n;
    return s;
}

nlohmann::json summary_to_json(const EvalSummary& s) {
    return nlohmann::json{{"n", s.n},
                          {"mean", s.mean},
                          {"stddev", s.stddev},
                          {"median", s.median},
                          {"q1", s.q1},
                          {"q3", s.q3},
                          {"min", s.min},
                          {"max", s.max},
                          {"mean_first_zenith", s.mean_first_zenith},
                          {"median_first_zenith", s.median_first_zenith},
                          {"mean_zenith_steps", s.mean_zenith_steps},
                          {"median_zenith_steps", s.median_zenith_steps},
                          {"mean_return_no_bonus", s.mean_return_no_bonus}};
}

Histogram make_histogram(const std::vector<double>& values, int bin_count) {
    if (values.empty()) throw ConfigError("make_histogram: empty input");
    Histogram h;
    h.lo = *std::min_element(values.begin(), values.end());
    h.hi = *std::max_element(values.begin(), values.end());

    int bins = bin_count;
    if (bins <= 0) {
        // Freedman-Diaconis
        const double iqr = quantile(values, 0.75) - quantile(values, 0.25);
        const double width = 2.0 * iqr / std::cbrt(static_cast<double>(values.size()));
        if (width > 0.0 && h.hi > h.lo)
            bins = static_cast<int>(std::ceil((h.hi - h.lo) / width));
        else
            bins = 1;
    }
    bins = std::max(1, bins);
    h.width = (h.hi > h.lo) ? (h.hi - h.lo) / bins : 1.0;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (double v : values) {
        int b = static_cast<int>((v - h.lo) / h.width);
        b = std::clamp(b, 0, bins - 1);  // max value lands in the last bin
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // Prefer the shortest representation that round-trips.
    for (int prec = 1; prec < 17; ++prec) {
        char cand[32];
        std::snprintf(cand, sizeof(cand), "%.*g", prec, v);
        double back = 0.0;
        std::sscanf(cand, "%lf", &back);
        if (back == v) return cand;
    }
    return buf;
}

namespace {

void write_histogram_csv(const std::string& path, const Histogram& h) {
    std::ofstream out(path);
    if (!out) throw Error("export_report: cannot write " + path);
    out << "bin_lo,bin_hi,count\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        out << format_double(h.lo + static_cast<double>(i) * h.width) << ","
            << format_double(h.lo + static_cast<double>(i + 1) * h.width) << "," << h.counts[i]
            << "\n";
    }
}

struct BoxRow {
    std::string group;
    std::vector<double> values;
};

void write_boxplot_csv(const std::string& path, const std::vector<BoxRow>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("export_report: cannot write " + path);
    out << "group,n,min,q1,median,q3,max,outliers\n";
    for (const auto& row : rows) {
        const double q1 = quantile(row.values, 0.25);
        const double q3 = quantile(row.values, 0.75);
        const double iqr = q3 - q1;
        const double lo_fence = q1 - 1.5 * iqr;
        const double hi_fence = q3 + 1.5 * iqr;
        double whisker_lo = q3, whisker_hi = q1;
        std::vector<double> outliers;
        for (double v : row.values) {
            if (v < lo_fence || v > hi_fence) {
                outliers.push_back(v);
            } else {
                whisker_lo = std::min(whisker_lo, v);
                whisker_hi = std::max(whisker_hi, v);
            }
        }
        out << row.group << "," << row.values.size() << "," << format_double(whisker_lo) << ","
            << format_double(q1) << "," << format_double(quantile(row.values, 0.5)) << ","
            << format_double(q3) << "," << format_double(whisker_hi) << ",";
        for (std::size_t i = 0; i < outliers.size(); ++i)
            out << (i ? ";" : "") << format_double(outliers[i]);
        out << "\n";
    }
}

}  // namespace

void export_report(const std::vector<IterationRecord>& records,
                   const std::vector<EpisodeLog>& oracle_logs, const std::string& out_dir) {
    if (records.empty()) throw ConfigError("export_report: no iteration records");
    if (oracle_logs.empty()) throw ConfigError("export_report: no oracle episodes");
    for (const auto& rec : records)
        if (rec.episode_returns.empty())
            throw ConfigError("export_report: iteration record without episode returns");

    std::filesystem::create_directories(out_dir);
    const auto path = [&](const std::string& name) {
        return (std::filesystem::path(out_dir) / name).string();
    };

    {
        std::ofstream out(path("iterations.csv"));
        if (!out) throw Error("export_report: cannot write iterations.csv");
        const std::size_t n_e = records.front().episode_returns.front().size();
        out << "iteration,tree_id,mean_return";
        for (std::size_t e = 0; e < n_e; ++e) out << ",ep" << e;
        out << "\n";
        for (const auto& rec : records) {
            for (std::size_t t = 0; t < rec.mean_returns.size(); ++t) {
                out << rec.iteration << "," << t << "," << format_double(rec.mean_returns[t]);
                for (double r : rec.episode_returns[t]) out << "," << format_double(r);
                out << "\n";
            }
        }
    }

    // Best iteration overall by mean return (ties toward the earlier one).
    std::size_t best_it = 0;
    for (std::size_t k = 1; k < records.size(); ++k) {
        const auto& a = records[k];
        const auto& b = records[best_it];
        if (a.mean_returns[static_cast<std::size_t>(a.best_tree_id)] >
            b.mean_returns[static_cast<std::size_t>(b.best_tree_id)])
            best_it = k;
    }

    std::vector<double> oracle_returns;
    for (const auto& log : oracle_logs) oracle_returns.push_back(log.total_return);
    const auto& first = records.front();
    const auto& best = records[best_it];

    {
        nlohmann::json j;
        j["oracle"] = summary_to_json(summarize(oracle_logs));
        j["best_iteration"] = best.iteration;
        nlohmann::json its = nlohmann::json::array();
        for (const auto& rec : records) {
            its.push_back({{"iteration", rec.iteration},
                           {"best_tree_id", rec.best_tree_id},
                           {"best_mean_return",
                            rec.mean_returns[static_cast<std::size_t>(rec.best_tree_id)]},
                           {"dataset_size_after", rec.dataset_size_after}});
        }
        j["iterations"] = its;
        std::ofstream out(path("summary.json"));
        if (!out) throw Error("export_report: cannot write summary.json");
        out << j.dump(2) << "\n";
    }

    // Histograms of the oracle collection episodes (return, return without
    // bonus, zenith dwell time, first zenith step).
    std::vector<double> no_bonus, zenith_steps, first_zenith;
    for (const auto& log : oracle_logs) {
        no_bonus.push_back(log.total_return - 10.0 * log.zenith_step_count);
        zenith_steps.push_back(static_cast<double>(log.zenith_step_count));
        if (log.first_zenith_step) first_zenith.push_back(static_cast<double>(*log.first_zenith_step));
    }
    write_histogram_csv(path("histogram_return.csv"), make_histogram(oracle_returns));
    write_histogram_csv(path("histogram_return_no_bonus.csv"), make_histogram(no_bonus));
    write_histogram_csv(path("histogram_zenith_steps.csv"), make_histogram(zenith_steps));
    if (!first_zenith.empty())
        write_histogram_csv(path("histogram_first_zenith.csv"), make_histogram(first_zenith));

    write_boxplot_csv(
        path("boxplot.csv"),
        {{"oracle", oracle_returns},
         {"iteration0_best", first.episode_returns[static_cast<std::size_t>(first.best_tree_id)]},
         {"final_best", best.episode_returns[static_cast<std::size_t>(best.best_tree_id)]}});
}

}  // namespace cpsu
