#pragma once

#include <Eigen/Dense>

#include "mmsn/tape.hpp"

namespace mmsn {

struct Temperatures {
  double tau = 0.1;        // anchor
  double tau_plus = 0.025; // target (sharper)
};

/// Per-batch loss decomposition: total = ce_term - lambda * entropy_term.
struct LossBreakdown {
  double ce_term = 0.0;
  double entropy_term = 0.0;  // H(p_bar)
  double lambda = 0.0;
  double total = 0.0;
  Eigen::VectorXd p_bar;
};

/// Temperature softmax over cosine similarities between z and each
/// prototype row. Rows of `prototypes` are L2-normalized on the fly.
Eigen::VectorXd assign(const Eigen::VectorXd& z, const Eigen::MatrixXd& prototypes,
                       double temperature);

/// H(p_target, p_anchor) = -sum_k p_target_k * log(max(p_anchor_k, 1e-12)).
double cross_entropy(const Eigen::VectorXd& p_target, const Eigen::VectorXd& p_anchor);

/// Elementwise average of the rows (each row one anchor distribution).
Eigen::VectorXd mean_anchor_distribution(const Eigen::MatrixXd& p_rows);

/// Shannon entropy of a distribution (natural log).
double entropy(const Eigen::VectorXd& p);

/// Reference evaluation of the full objective: z_anchor holds B*M rows
/// grouped sample-major (rows i*M..i*M+M-1 belong to sample i), z_target
/// holds B rows. Target assignments use tau_plus and are constants.
LossBreakdown total_loss(const Eigen::MatrixXd& z_anchor, const Eigen::MatrixXd& z_target,
                         const Eigen::MatrixXd& prototypes, const Temperatures& temps,
                         double lambda);

namespace nn {

/// Tape node layout of the same objective, for training. `p_target_rows`
/// are precomputed constants (stop-gradient), one row per sample.
struct LossGraph {
  Var total;
  Var ce;
  Var entropy;
  Var p_anchor;  // (B*M) x K assignments
};

LossGraph total_loss_graph(Tape& tape, Var z_anchor_rows, const Eigen::MatrixXd& p_target_rows,
                           int batch, int views_per_sample, Var prototypes,
                           const Temperatures& temps, double lambda);

}  // namespace nn

}  // namespace mmsn
