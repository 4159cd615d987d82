#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mmsn {

/// Rank statistic: P(score+ > score-) + 0.5 P(tie), computed exactly via
/// midranks. Throws SingleClass without both classes.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Average precision: step-wise integration of precision over recall at
/// every distinct threshold, descending. Throws NoPositives.
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

using MetricFn = std::function<double(const std::vector<double>&, const std::vector<int>&)>;

/// Percentile bootstrap interval [2.5%, 97.5%]. Resamples with a single
/// class (or otherwise unusable for the metric) are skipped and counted;
/// fewer than half usable resamples is an error (TooFewValidResamples).
struct BootstrapResult {
  double lo = 0.0;
  double hi = 0.0;
  int skipped = 0;
};
BootstrapResult bootstrap_ci(const std::vector<double>& scores, const std::vector<int>& labels,
                             const MetricFn& metric, int n_boot, std::uint64_t seed);

/// Two-sided paired permutation test on the AUROC difference of two models
/// over the same samples.
double significance_test(const std::vector<double>& scores_a,
                         const std::vector<double>& scores_b, const std::vector<int>& labels,
                         int n_perm, std::uint64_t seed);

/// Per-label and aggregate report for a 14-label problem. Labels without
/// both classes in the evaluation set are excluded from the aggregate; the
/// aggregate is the unweighted (macro) mean of the rest.
struct MetricReport {
  std::vector<double> per_label_auroc;  // NaN where excluded
  std::vector<double> per_label_auprc;
  double auroc = 0.0;
  double auprc = 0.0;
  std::pair<double, double> auroc_ci{0.0, 0.0};
  std::pair<double, double> auprc_ci{0.0, 0.0};
  int n_bootstrap = 0;
  std::optional<double> p_value_vs_reference;
  std::vector<int> excluded_labels;      // no positive+negative in eval data
  std::vector<int> degenerate_labels;    // constant in training data
  int n_samples = 0;

  // Raw evaluation scores/labels/ids, kept so reports are comparable.
  Eigen::MatrixXd scores;  // n x L
  Eigen::MatrixXd labels;  // n x L, 0/1
  std::vector<std::string> sample_ids;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

/// Macro AUROC over labels with both classes present; NaN if none.
double macro_auroc(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels);
double macro_auprc(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels);

/// Builds the full report (per-label metrics, macro aggregates, bootstrap
/// CIs over row resamples). Labels listed in `degenerate` (constant in the
/// training data) are excluded from per-label metrics and aggregates.
MetricReport build_metric_report(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels,
                                 const std::vector<std::string>& sample_ids, int n_boot,
                                 std::uint64_t seed, const std::vector<int>& degenerate = {});

/// Paired permutation test on the macro-AUROC difference between two score
/// matrices over identical samples/labels.
double report_significance(const MetricReport& a, const MetricReport& b, int n_perm,
                           std::uint64_t seed);

}  // namespace mmsn
