#include "gridcascade/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gridcascade/error.hpp"

namespace gridcascade {

int bin_index(const Binning& binning, double value) {
    if (binning.bins < 1 || !(binning.hi > binning.lo)) {
        throw ValidationError("bin_index: malformed binning");
    }
    const double width = (binning.hi - binning.lo) / binning.bins;
    const int idx = static_cast<int>(std::floor((value - binning.lo) / width));
    return std::clamp(idx, 0, binning.bins - 1);
}

double bin_center(const Binning& binning, int index) {
    const double width = (binning.hi - binning.lo) / binning.bins;
    return binning.lo + (index + 0.5) * width;
}

std::vector<std::optional<BinStat>> bin_report(const std::vector<double>& values,
                                               const std::vector<double>& keys,
                                               const Binning& binning) {
    if (values.size() != keys.size()) {
        throw ValidationError("bin_report: values and keys differ in length");
    }
    std::vector<double> sums(static_cast<std::size_t>(binning.bins), 0.0);
    std::vector<long> counts(static_cast<std::size_t>(binning.bins), 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto b = static_cast<std::size_t>(bin_index(binning, keys[i]));
        sums[b] += values[i];
        ++counts[b];
    }
    std::vector<std::optional<BinStat>> out(static_cast<std::size_t>(binning.bins));
    for (std::size_t b = 0; b < sums.size(); ++b) {
        if (counts[b] > 0) out[b] = BinStat{sums[b] / counts[b], counts[b]};
    }
    return out;
}

std::pair<std::vector<int>, std::vector<int>> reconcile_steps(const std::vector<int>& pred_steps,
                                                              int pred_length,
                                                              const std::vector<int>& true_steps,
                                                              int true_length) {
    if (pred_steps.size() != true_steps.size()) {
        throw ValidationError("reconcile_steps: prediction and truth differ in length");
    }
    const int common = std::max(pred_length, true_length);
    std::vector<int> pred = pred_steps;
    std::vector<int> truth = true_steps;
    for (std::size_t e = 0; e < pred.size(); ++e) {
        pred[e] = pred[e] >= pred_length ? common : std::min(pred[e], common);
        truth[e] = truth[e] >= true_length ? common : std::min(truth[e], common);
    }
    return {std::move(pred), std::move(truth)};
}

namespace {

void check_matched(const std::vector<CascadePrediction>& preds, const DataPool& truth) {
    if (preds.size() != truth.samples.size()) {
        throw ValidationError("metrics: prediction list does not match the pool size");
    }
}

std::vector<double> pool_alphas(const DataPool& pool) {
    std::vector<double> a;
    a.reserve(pool.samples.size());
    for (const auto& s : pool.samples) a.push_back(s.alpha);
    return a;
}

}  // namespace

std::vector<std::optional<BinStat>> failure_size_error(const std::vector<CascadePrediction>& preds,
                                                       const DataPool& truth,
                                                       const Binning& alpha_bins) {
    check_matched(preds, truth);
    std::vector<double> values;
    values.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const CascadeSample& s = truth.samples[i];
        int failed_true = 0;
        int failed_pred = 0;
        for (std::size_t e = 0; e < s.failure_step.size(); ++e) {
            failed_true += s.failure_step[e] < s.length;
            failed_pred += preds[i].failure_step[e] < preds[i].length;
        }
        if (failed_true == 0) {
            throw ValidationError("failure_size_error: sample " + std::to_string(i) +
                                  " has no failed branches");
        }
        values.push_back(std::abs(failed_true - failed_pred) / static_cast<double>(failed_true));
    }
    return bin_report(values, pool_alphas(truth), alpha_bins);
}

std::vector<std::optional<BinStat>> final_state_error(const std::vector<CascadePrediction>& preds,
                                                      const DataPool& truth,
                                                      const Binning& alpha_bins) {
    check_matched(preds, truth);
    std::vector<double> values;
    values.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const CascadeSample& s = truth.samples[i];
        if (preds[i].failure_step.size() != s.failure_step.size()) {
            throw ValidationError("final_state_error: branch count mismatch at sample " +
                                  std::to_string(i));
        }
        int wrong = 0;
        for (std::size_t e = 0; e < s.failure_step.size(); ++e) {
            const bool failed_true = s.failure_step[e] < s.length;
            const bool failed_pred = preds[i].failure_step[e] < preds[i].length;
            wrong += failed_true != failed_pred;
        }
        values.push_back(static_cast<double>(wrong) / s.failure_step.size());
    }
    return bin_report(values, pool_alphas(truth), alpha_bins);
}

std::vector<std::optional<BinStat>> failure_step_error(const std::vector<CascadePrediction>& preds,
                                                       const DataPool& truth,
                                                       const Binning& alpha_bins) {
    check_matched(preds, truth);
    std::vector<double> values;
    values.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const CascadeSample& s = truth.samples[i];
        if (preds[i].failure_step.size() != s.failure_step.size()) {
            throw ValidationError("failure_step_error: branch count mismatch at sample " +
                                  std::to_string(i));
        }
        const auto [pred, tru] =
            reconcile_steps(preds[i].failure_step, preds[i].length, s.failure_step, s.length);
        double total = 0.0;
        for (std::size_t e = 0; e < pred.size(); ++e) total += std::abs(pred[e] - tru[e]);
        values.push_back(total / pred.size());
    }
    return bin_report(values, pool_alphas(truth), alpha_bins);
}

std::vector<double> branch_failure_frequency(const DataPool& pool) {
    if (pool.samples.empty()) throw ValidationError("branch_failure_frequency: empty pool");
    const std::size_t num_edges = pool.samples.front().failure_step.size();
    std::vector<double> freq(num_edges, 0.0);
    for (const CascadeSample& s : pool.samples) {
        for (std::size_t e = 0; e < num_edges; ++e) {
            if (s.failure_step[e] >= 1 && s.failure_step[e] < s.length) freq[e] += 1.0;
        }
    }
    for (double& f : freq) f /= static_cast<double>(pool.samples.size());
    return freq;
}

std::vector<std::optional<BinStat>> branch_final_state_error(
    const std::vector<CascadePrediction>& preds, const DataPool& truth) {
    check_matched(preds, truth);
    if (truth.samples.empty()) throw ValidationError("branch_final_state_error: empty pool");
    const std::size_t num_edges = truth.samples.front().failure_step.size();
    std::vector<long> wrong(num_edges, 0);
    std::vector<long> initial(num_edges, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const CascadeSample& s = truth.samples[i];
        for (std::size_t e = 0; e < num_edges; ++e) {
            if (!s.contingency[e]) {
                ++initial[e];
                continue;
            }
            const bool failed_true = s.failure_step[e] < s.length;
            const bool failed_pred = preds[i].failure_step[e] < preds[i].length;
            wrong[e] += failed_true != failed_pred;
        }
    }
    std::vector<std::optional<BinStat>> out(num_edges);
    const long total = static_cast<long>(truth.samples.size());
    for (std::size_t e = 0; e < num_edges; ++e) {
        const long denom = total - initial[e];
        if (denom > 0) out[e] = BinStat{static_cast<double>(wrong[e]) / denom, denom};
    }
    return out;
}

std::vector<std::optional<BinStat>> branch_failure_step_error(
    const std::vector<CascadePrediction>& preds, const DataPool& truth) {
    check_matched(preds, truth);
    if (truth.samples.empty()) throw ValidationError("branch_failure_step_error: empty pool");
    const std::size_t num_edges = truth.samples.front().failure_step.size();
    std::vector<double> total(num_edges, 0.0);
    std::vector<long> count(num_edges, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const CascadeSample& s = truth.samples[i];
        const auto [pred, tru] =
            reconcile_steps(preds[i].failure_step, preds[i].length, s.failure_step, s.length);
        for (std::size_t e = 0; e < num_edges; ++e) {
            const bool failed_in_cascade = s.failure_step[e] >= 1 && s.failure_step[e] < s.length;
            if (!failed_in_cascade) continue;
            total[e] += std::abs(pred[e] - tru[e]);
            ++count[e];
        }
    }
    std::vector<std::optional<BinStat>> out(num_edges);
    for (std::size_t e = 0; e < num_edges; ++e) {
        if (count[e] > 0) out[e] = BinStat{total[e] / count[e], count[e]};
    }
    return out;
}

MetricsReport evaluate_predictions(const std::vector<CascadePrediction>& preds,
                                   const DataPool& test_pool, const DataPool& frequency_pool,
                                   const std::string& model_id, const Binning& alpha_bins) {
    MetricsReport report;
    report.model_id = model_id;
    report.pool_id = test_pool.grid_id + "/" + to_string(test_pool.split);
    report.alpha_bins = alpha_bins;
    report.size_error = failure_size_error(preds, test_pool, alpha_bins);
    report.state_error = final_state_error(preds, test_pool, alpha_bins);
    report.step_error = failure_step_error(preds, test_pool, alpha_bins);
    report.branch_frequency = branch_failure_frequency(frequency_pool);
    report.branch_state_error = branch_final_state_error(preds, test_pool);
    report.branch_step_error = branch_failure_step_error(preds, test_pool);
    return report;
}

namespace {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_bin_csv(const std::string& path, const Binning& binning,
                   const std::vector<std::optional<BinStat>>& stats) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "bin,value,count\n";
    for (std::size_t b = 0; b < stats.size(); ++b) {
        if (!stats[b]) continue;
        out << format_double(bin_center(binning, static_cast<int>(b))) << ','
            << format_double(stats[b]->value) << ',' << stats[b]->count << '\n';
    }
}

void write_branch_csv(const std::string& path, const std::vector<double>& freq,
                      const std::vector<std::optional<BinStat>>& stats) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "branch,freq,value,count\n";
    for (std::size_t e = 0; e < stats.size(); ++e) {
        if (!stats[e]) continue;
        out << e << ',' << format_double(freq[e]) << ',' << format_double(stats[e]->value) << ','
            << stats[e]->count << '\n';
    }
}

}  // namespace

void write_metrics_csv(const MetricsReport& report, const std::string& directory) {
    std::filesystem::create_directories(directory);
    const std::filesystem::path dir(directory);
    write_bin_csv((dir / "l_size.csv").string(), report.alpha_bins, report.size_error);
    write_bin_csv((dir / "l_state.csv").string(), report.alpha_bins, report.state_error);
    write_bin_csv((dir / "l_failure_step.csv").string(), report.alpha_bins, report.step_error);
    write_branch_csv((dir / "branch_state_error.csv").string(), report.branch_frequency,
                     report.branch_state_error);
    write_branch_csv((dir / "branch_step_error.csv").string(), report.branch_frequency,
                     report.branch_step_error);
}

}  // namespace gridcascade
