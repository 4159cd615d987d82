#include "mmsn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mmsn/common.hpp"
#include "mmsn/rng.hpp"

namespace mmsn {

namespace {

void check_scores(const std::vector<double>& scores, const std::vector<int>& labels) {
  require(scores.size() == labels.size(), "MisalignedInputs",
          "scores and labels have different lengths");
  require(!scores.empty(), "MisalignedInputs", "empty inputs");
  for (double s : scores) {
    require(std::isfinite(s), "InvalidArgument", "non-finite score");
  }
  for (int l : labels) {
    require(l == 0 || l == 1, "InvalidArgument", "labels must be 0/1");
  }
}

}  // namespace

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_scores(scores, labels);
  const std::size_t n = scores.size();
  long n_pos = 0;
  for (int l : labels) n_pos += l;
  const long n_neg = static_cast<long>(n) - n_pos;
  require(n_pos > 0 && n_neg > 0, "SingleClass", "AUROC needs both classes");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks over tie groups; rank sum of positives gives the Mann-Whitney
  // statistic.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>((i + 1) + (j + 1));
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[idx[t]] == 1) pos_rank_sum += midrank;
    }
    i = j + 1;
  }
  const double u = pos_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_scores(scores, labels);
  const std::size_t n = scores.size();
  long n_pos = 0;
  for (int l : labels) n_pos += l;
  require(n_pos > 0, "NoPositives", "AUPRC needs at least one positive");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  long tp = 0, fp = 0;
  double recall_prev = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[idx[t]] == 1) ++tp; else ++fp;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - recall_prev) * precision;
    recall_prev = recall;
    i = j + 1;
  }
  return ap;
}

BootstrapResult bootstrap_ci(const std::vector<double>& scores, const std::vector<int>& labels,
                             const MetricFn& metric, int n_boot, std::uint64_t seed) {
  check_scores(scores, labels);
  require(n_boot >= 100, "InvalidArgument", "n_boot must be >= 100");
  const int n = static_cast<int>(scores.size());

  Prng rng(derive_seed(seed, "bootstrap"));
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n_boot));
  int skipped = 0;
  std::vector<double> rs(static_cast<std::size_t>(n));
  std::vector<int> rl(static_cast<std::size_t>(n));
  for (int b = 0; b < n_boot; ++b) {
    for (int i = 0; i < n; ++i) {
      const int j = rng.uniform_int(0, n - 1);
      rs[static_cast<std::size_t>(i)] = scores[static_cast<std::size_t>(j)];
      rl[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(j)];
    }
    try {
      values.push_back(metric(rs, rl));
    } catch (const Error&) {
      ++skipped;  // degenerate resample (e.g. single class)
    }
  }
  require(static_cast<int>(values.size()) >= (n_boot + 1) / 2, "TooFewValidResamples",
          "only " + std::to_string(values.size()) + " of " + std::to_string(n_boot) +
              " bootstrap resamples were usable");

  std::sort(values.begin(), values.end());
  auto quantile = [&values](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
  };
  BootstrapResult out;
  out.lo = quantile(0.025);
  out.hi = quantile(0.975);
  out.skipped = skipped;
  return out;
}

double significance_test(const std::vector<double>& scores_a,
                         const std::vector<double>& scores_b, const std::vector<int>& labels,
                         int n_perm, std::uint64_t seed) {
  require(scores_a.size() == scores_b.size() && scores_a.size() == labels.size(),
          "MisalignedInputs", "paired test requires aligned inputs");
  require(n_perm >= 1, "InvalidArgument", "n_perm must be >= 1");
  const double observed = std::abs(auroc(scores_a, labels) - auroc(scores_b, labels));

  Prng rng(derive_seed(seed, "significance"));
  const std::size_t n = labels.size();
  std::vector<double> pa(n), pb(n);
  long hits = 0;
  for (int p = 0; p < n_perm; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.bernoulli(0.5)) {
        pa[i] = scores_b[i];
        pb[i] = scores_a[i];
      } else {
        pa[i] = scores_a[i];
        pb[i] = scores_b[i];
      }
    }
    const double delta = std::abs(auroc(pa, labels) - auroc(pb, labels));
    if (delta >= observed) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n_perm);
}

namespace {

std::vector<double> column(const Eigen::MatrixXd& m, int c) {
  std::vector<double> v(static_cast<std::size_t>(m.rows()));
  for (long r = 0; r < m.rows(); ++r) v[static_cast<std::size_t>(r)] = m(r, c);
  return v;
}

std::vector<int> column_int(const Eigen::MatrixXd& m, int c) {
  std::vector<int> v(static_cast<std::size_t>(m.rows()));
  for (long r = 0; r < m.rows(); ++r) {
    v[static_cast<std::size_t>(r)] = m(r, c) > 0.5 ? 1 : 0;
  }
  return v;
}

bool has_both_classes(const Eigen::MatrixXd& labels, int c) {
  bool pos = false, neg = false;
  for (long r = 0; r < labels.rows(); ++r) {
    (labels(r, c) > 0.5 ? pos : neg) = true;
    if (pos && neg) return true;
  }
  return false;
}

}  // namespace

namespace {

double masked_macro(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels,
                    const std::vector<int>& skip, bool use_auprc) {
  double sum = 0.0;
  int count = 0;
  for (int c = 0; c < labels.cols(); ++c) {
    if (std::find(skip.begin(), skip.end(), c) != skip.end()) continue;
    if (!has_both_classes(labels, c)) continue;
    sum += use_auprc ? auprc(column(scores, c), column_int(labels, c))
                     : auroc(column(scores, c), column_int(labels, c));
    ++count;
  }
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  return sum / count;
}

}  // namespace

double macro_auroc(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels) {
  return masked_macro(scores, labels, {}, false);
}

double macro_auprc(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels) {
  return masked_macro(scores, labels, {}, true);
}

MetricReport build_metric_report(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels,
                                 const std::vector<std::string>& sample_ids, int n_boot,
                                 std::uint64_t seed, const std::vector<int>& degenerate) {
  require(scores.rows() == labels.rows() && scores.cols() == labels.cols(), "MisalignedInputs",
          "score and label matrices differ in shape");
  require(scores.rows() >= 2, "MisalignedInputs", "need at least two samples");

  MetricReport rep;
  rep.scores = scores;
  rep.labels = labels;
  rep.sample_ids = sample_ids;
  rep.n_samples = static_cast<int>(scores.rows());
  rep.n_bootstrap = n_boot;
  rep.degenerate_labels = degenerate;

  const int L = static_cast<int>(labels.cols());
  rep.per_label_auroc.assign(static_cast<std::size_t>(L),
                             std::numeric_limits<double>::quiet_NaN());
  rep.per_label_auprc.assign(static_cast<std::size_t>(L),
                             std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < L; ++c) {
    if (std::find(degenerate.begin(), degenerate.end(), c) != degenerate.end()) continue;
    if (!has_both_classes(labels, c)) {
      rep.excluded_labels.push_back(c);
      continue;
    }
    rep.per_label_auroc[static_cast<std::size_t>(c)] = auroc(column(scores, c), column_int(labels, c));
    rep.per_label_auprc[static_cast<std::size_t>(c)] = auprc(column(scores, c), column_int(labels, c));
  }
  rep.auroc = masked_macro(scores, labels, degenerate, false);
  rep.auprc = masked_macro(scores, labels, degenerate, true);

  // Bootstrap over row resamples of the full matrix; per-resample macro
  // means skip labels that degenerate inside the resample.
  const int n = rep.n_samples;
  Prng rng(derive_seed(seed, "report_bootstrap"));
  std::vector<double> roc_vals, prc_vals;
  roc_vals.reserve(static_cast<std::size_t>(n_boot));
  Eigen::MatrixXd rs(n, L), rl(n, L);
  for (int b = 0; b < n_boot; ++b) {
    for (int i = 0; i < n; ++i) {
      const int j = rng.uniform_int(0, n - 1);
      rs.row(i) = scores.row(j);
      rl.row(i) = labels.row(j);
    }
    const double mroc = masked_macro(rs, rl, degenerate, false);
    const double mprc = masked_macro(rs, rl, degenerate, true);
    if (std::isfinite(mroc)) roc_vals.push_back(mroc);
    if (std::isfinite(mprc)) prc_vals.push_back(mprc);
  }
  require(static_cast<int>(roc_vals.size()) >= (n_boot + 1) / 2, "TooFewValidResamples",
          "macro AUROC bootstrap had too few usable resamples");
  auto pct_interval = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    auto quantile = [&v](double q) {
      const double pos = q * static_cast<double>(v.size() - 1);
      const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
      const double frac = pos - static_cast<double>(lo);
      return v[lo] * (1.0 - frac) + v[hi] * frac;
    };
    return std::pair<double, double>(quantile(0.025), quantile(0.975));
  };
  rep.auroc_ci = pct_interval(roc_vals);
  rep.auprc_ci = pct_interval(prc_vals);
  return rep;
}

double report_significance(const MetricReport& a, const MetricReport& b, int n_perm,
                           std::uint64_t seed) {
  require(a.scores.rows() == b.scores.rows() && a.scores.cols() == b.scores.cols(),
          "MisalignedInputs", "reports cover different sample sets");
  require(a.labels.rows() == b.labels.rows() && a.labels.cols() == b.labels.cols() &&
              a.labels.isApprox(b.labels),
          "MisalignedInputs", "reports carry different labels");
  if (!a.sample_ids.empty() && !b.sample_ids.empty()) {
    require(a.sample_ids == b.sample_ids, "MisalignedInputs", "sample ids differ between reports");
  }

  const double observed = std::abs(macro_auroc(a.scores, a.labels) -
                                   macro_auroc(b.scores, b.labels));
  Prng rng(derive_seed(seed, "report_significance"));
  const long n = a.scores.rows();
  Eigen::MatrixXd pa(a.scores.rows(), a.scores.cols()), pb(pa.rows(), pa.cols());
  long hits = 0;
  for (int p = 0; p < n_perm; ++p) {
    for (long i = 0; i < n; ++i) {
      if (rng.bernoulli(0.5)) {
        pa.row(i) = b.scores.row(i);
        pb.row(i) = a.scores.row(i);
      } else {
        pa.row(i) = a.scores.row(i);
        pb.row(i) = b.scores.row(i);
      }
    }
    const double delta = std::abs(macro_auroc(pa, a.labels) - macro_auroc(pb, a.labels));
    if (delta >= observed) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n_perm);
}

namespace {

nlohmann::json vec_with_nulls(const std::vector<double>& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (double x : v) {
    if (std::isfinite(x)) arr.push_back(x);
    else arr.push_back(nullptr);
  }
  return arr;
}

std::vector<double> vec_from_nulls(const nlohmann::json& arr) {
  std::vector<double> v;
  for (const auto& x : arr) {
    v.push_back(x.is_null() ? std::numeric_limits<double>::quiet_NaN() : x.get<double>());
  }
  return v;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (long r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (long c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& rows) {
  const long r = static_cast<long>(rows.size());
  if (r == 0) return {};
  const long c = static_cast<long>(rows[0].size());
  Eigen::MatrixXd m(r, c);
  for (long i = 0; i < r; ++i) {
    for (long j = 0; j < c; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return m;
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["per_label_auroc"] = vec_with_nulls(per_label_auroc);
  j["per_label_auprc"] = vec_with_nulls(per_label_auprc);
  j["auroc"] = auroc;
  j["auprc"] = auprc;
  j["auroc_ci"] = {auroc_ci.first, auroc_ci.second};
  j["auprc_ci"] = {auprc_ci.first, auprc_ci.second};
  j["n_bootstrap"] = n_bootstrap;
  if (p_value_vs_reference) j["p_value_vs_reference"] = *p_value_vs_reference;
  j["excluded_labels"] = excluded_labels;
  j["degenerate_labels"] = degenerate_labels;
  j["n_samples"] = n_samples;
  j["test_scores"] = matrix_to_json(scores);
  j["test_labels"] = matrix_to_json(labels);
  j["sample_ids"] = sample_ids;
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.per_label_auroc = vec_from_nulls(j.at("per_label_auroc"));
  r.per_label_auprc = vec_from_nulls(j.at("per_label_auprc"));
  r.auroc = j.at("auroc").get<double>();
  r.auprc = j.at("auprc").get<double>();
  r.auroc_ci = {j.at("auroc_ci")[0].get<double>(), j.at("auroc_ci")[1].get<double>()};
  r.auprc_ci = {j.at("auprc_ci")[0].get<double>(), j.at("auprc_ci")[1].get<double>()};
  r.n_bootstrap = j.at("n_bootstrap").get<int>();
  if (j.contains("p_value_vs_reference")) {
    r.p_value_vs_reference = j.at("p_value_vs_reference").get<double>();
  }
  r.excluded_labels = j.at("excluded_labels").get<std::vector<int>>();
  r.degenerate_labels = j.at("degenerate_labels").get<std::vector<int>>();
  r.n_samples = j.at("n_samples").get<int>();
  r.scores = matrix_from_json(j.at("test_scores"));
  r.labels = matrix_from_json(j.at("test_labels"));
  r.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
  return r;
}

}  // namespace mmsn
