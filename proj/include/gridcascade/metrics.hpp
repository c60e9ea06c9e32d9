#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gridcascade/datapool.hpp"
#include "gridcascade/gnn.hpp"

namespace gridcascade {

/// Equal-width binning; the last bin is closed on the right, so hi lands in
/// bin `bins - 1`. Values outside [lo, hi] clamp to the boundary bins.
struct Binning {
    double lo = 1.0;
    double hi = 2.0;
    int bins = 21;
};

int bin_index(const Binning& binning, double value);
double bin_center(const Binning& binning, int index);

struct BinStat {
    double value = 0.0;
    long count = 0;
};

/// Mean of `values` grouped by `keys`; empty bins stay absent.
std::vector<std::optional<BinStat>> bin_report(const std::vector<double>& values,
                                               const std::vector<double>& keys,
                                               const Binning& binning);

/// Expresses prediction and truth on the common horizon max(T_pred, T_truth):
/// survivors move to that horizon, failed steps carry over.
std::pair<std::vector<int>, std::vector<int>> reconcile_steps(const std::vector<int>& pred_steps,
                                                              int pred_length,
                                                              const std::vector<int>& true_steps,
                                                              int true_length);

/// Relative error of the failed-branch count at cascade end, averaged per
/// alpha bin. Initially-failed branches count as failed.
std::vector<std::optional<BinStat>> failure_size_error(const std::vector<CascadePrediction>& preds,
                                                       const DataPool& truth,
                                                       const Binning& alpha_bins);

/// Mean per-branch disagreement of the final state, averaged per alpha bin.
std::vector<std::optional<BinStat>> final_state_error(const std::vector<CascadePrediction>& preds,
                                                      const DataPool& truth,
                                                      const Binning& alpha_bins);

/// Mean absolute failure-step difference (in generations), averaged per
/// alpha bin.
std::vector<std::optional<BinStat>> failure_step_error(const std::vector<CascadePrediction>& preds,
                                                       const DataPool& truth,
                                                       const Binning& alpha_bins);

/// Fraction of pool samples in which each branch failed during the cascade
/// but not as part of the contingency.
std::vector<double> branch_failure_frequency(const DataPool& pool);

/// Per branch: wrong final states divided by the test samples that did not
/// fail the branch initially. Absent when that denominator is zero.
std::vector<std::optional<BinStat>> branch_final_state_error(
    const std::vector<CascadePrediction>& preds, const DataPool& truth);

/// Per branch: mean absolute step error over the samples where it truly
/// failed in-cascade. Absent when it never did.
std::vector<std::optional<BinStat>> branch_failure_step_error(
    const std::vector<CascadePrediction>& preds, const DataPool& truth);

struct MetricsReport {
    std::string model_id;
    std::string pool_id;
    Binning alpha_bins;
    std::vector<std::optional<BinStat>> size_error;
    std::vector<std::optional<BinStat>> state_error;
    std::vector<std::optional<BinStat>> step_error;
    std::vector<double> branch_frequency;
    std::vector<std::optional<BinStat>> branch_state_error;
    std::vector<std::optional<BinStat>> branch_step_error;
};

/// Runs every metric. `frequency_pool` supplies the branch failure
/// frequencies (normally the training split).
MetricsReport evaluate_predictions(const std::vector<CascadePrediction>& preds,
                                   const DataPool& test_pool, const DataPool& frequency_pool,
                                   const std::string& model_id, const Binning& alpha_bins = {});

/// One CSV per graph metric (bin,value,count) and per branch metric
/// (branch,freq,value,count) under `directory`.
void write_metrics_csv(const MetricsReport& report, const std::string& directory);

}  // namespace gridcascade
