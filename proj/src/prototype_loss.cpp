#include "mmsn/prototype_loss.hpp"

#include <cmath>

#include "mmsn/common.hpp"

namespace mmsn {

namespace {
constexpr double kLogFloor = 1e-12;
}

Eigen::VectorXd assign(const Eigen::VectorXd& z, const Eigen::MatrixXd& prototypes,
                       double temperature) {
  require(temperature > 0.0, "NonPositiveTemperature",
          "temperature must be > 0, got " + std::to_string(temperature));
  require(prototypes.rows() >= 2, "InvalidArgument", "need at least 2 prototypes");
  require(z.size() == prototypes.cols(), "ShapeMismatch",
          "embedding dimension does not match prototype width");
  const double zn = z.norm();
  require(zn > 1e-30, "ZeroVector", "cannot assign a zero embedding");

  const long k = prototypes.rows();
  Eigen::VectorXd logits(k);
  for (long i = 0; i < k; ++i) {
    const double qn = prototypes.row(i).norm();
    require(qn > 1e-30, "ZeroVector", "prototype row " + std::to_string(i) + " is zero");
    logits(i) = prototypes.row(i).dot(z) / (qn * zn * temperature);
  }
  const double m = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - m).exp();
  return p / p.sum();
}

double cross_entropy(const Eigen::VectorXd& p_target, const Eigen::VectorXd& p_anchor) {
  require(p_target.size() == p_anchor.size(), "InvalidDistribution",
          "distributions have different sizes");
  double sum_t = 0.0, sum_a = 0.0;
  for (long i = 0; i < p_target.size(); ++i) {
    require(p_target(i) >= 0.0 && p_anchor(i) >= 0.0, "InvalidDistribution",
            "distribution entries must be nonnegative");
    sum_t += p_target(i);
    sum_a += p_anchor(i);
  }
  require(std::abs(sum_t - 1.0) <= 1e-6 && std::abs(sum_a - 1.0) <= 1e-6, "InvalidDistribution",
          "distributions must sum to 1");
  double h = 0.0;
  for (long i = 0; i < p_target.size(); ++i) {
    h -= p_target(i) * std::log(std::max(p_anchor(i), kLogFloor));
  }
  return h;
}

Eigen::VectorXd mean_anchor_distribution(const Eigen::MatrixXd& p_rows) {
  require(p_rows.rows() >= 1, "EmptyBatch", "no distributions to average");
  return p_rows.colwise().mean().transpose();
}

double entropy(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (long i = 0; i < p.size(); ++i) {
    h -= p(i) * std::log(std::max(p(i), kLogFloor));
  }
  return h;
}

LossBreakdown total_loss(const Eigen::MatrixXd& z_anchor, const Eigen::MatrixXd& z_target,
                         const Eigen::MatrixXd& prototypes, const Temperatures& temps,
                         double lambda) {
  const long b = z_target.rows();
  require(b >= 1, "EmptyBatch", "empty target batch");
  require(z_anchor.rows() % b == 0, "ShapeMismatch",
          "anchor rows must be a multiple of the batch size");
  const long m = z_anchor.rows() / b;
  require(m >= 1, "ShapeMismatch", "need at least one anchor view per sample");
  require(z_anchor.cols() == z_target.cols(), "ShapeMismatch",
          "anchor/target embedding widths differ");

  const long k = prototypes.rows();
  Eigen::MatrixXd p_anchor(b * m, k);
  double ce = 0.0;
  for (long i = 0; i < b; ++i) {
    const Eigen::VectorXd p_t = assign(z_target.row(i).transpose(), prototypes, temps.tau_plus);
    for (long v = 0; v < m; ++v) {
      const long r = i * m + v;
      const Eigen::VectorXd p_a = assign(z_anchor.row(r).transpose(), prototypes, temps.tau);
      p_anchor.row(r) = p_a.transpose();
      ce += cross_entropy(p_t, p_a);
    }
  }
  ce /= static_cast<double>(b * m);

  LossBreakdown out;
  out.p_bar = mean_anchor_distribution(p_anchor);
  out.ce_term = ce;
  out.entropy_term = entropy(out.p_bar);
  out.lambda = lambda;
  out.total = out.ce_term - lambda * out.entropy_term;
  return out;
}

namespace nn {

LossGraph total_loss_graph(Tape& tape, Var z_anchor_rows, const Eigen::MatrixXd& p_target_rows,
                           int batch, int views_per_sample, Var prototypes,
                           const Temperatures& temps, double lambda) {
  require(temps.tau > 0.0 && temps.tau_plus > 0.0, "NonPositiveTemperature",
          "temperatures must be > 0");
  const long bm = z_anchor_rows.rows();
  require(batch >= 1 && views_per_sample >= 1 &&
              bm == static_cast<long>(batch) * views_per_sample,
          "ShapeMismatch", "anchor rows must equal batch * views_per_sample");
  require(p_target_rows.rows() == batch && p_target_rows.cols() == prototypes.rows(),
          "ShapeMismatch", "target assignment shape mismatch");

  // Anchor assignments: softmax of cosine similarity / tau.
  Var zn = tape.l2_normalize_rows(z_anchor_rows);
  Var qn = tape.l2_normalize_rows(prototypes);
  Var logits = tape.scale(tape.matmul(zn, tape.transpose(qn)), 1.0 / temps.tau);
  Var p_anchor = tape.softmax_rows(logits);

  // Cross-entropy against constant targets, rows repeated per view.
  Eigen::MatrixXd targets(bm, p_target_rows.cols());
  for (int i = 0; i < batch; ++i) {
    for (int v = 0; v < views_per_sample; ++v) {
      targets.row(static_cast<long>(i) * views_per_sample + v) = p_target_rows.row(i);
    }
  }
  Var log_p = tape.log_clamped(p_anchor, kLogFloor);
  Var ce = tape.scale(tape.sum_all(tape.hadamard(tape.constant(std::move(targets)), log_p)),
                      -1.0 / static_cast<double>(bm));

  // Mean-entropy regularizer on the batch-average anchor assignment.
  Var p_bar = tape.colwise_mean(p_anchor);
  Var ent = tape.scale(tape.sum_all(tape.hadamard(p_bar, tape.log_clamped(p_bar, kLogFloor))),
                       -1.0);

  LossGraph g;
  g.ce = ce;
  g.entropy = ent;
  g.p_anchor = p_anchor;
  g.total = tape.sub(ce, tape.scale(ent, lambda));
  return g;
}

}  // namespace nn

}  // namespace mmsn
