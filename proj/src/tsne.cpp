#include "mmsn/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "mmsn/common.hpp"
#include "mmsn/dataset.hpp"
#include "mmsn/rng.hpp"

namespace mmsn {

namespace {

// Conditional affinities p_{j|i} with per-point bandwidths found by binary
// search on the perplexity.
Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& d2, double perplexity) {
  const long n = d2.rows();
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  const double log_perp = std::log(perplexity);

  for (long i = 0; i < n; ++i) {
    double beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
    double beta = 1.0;
    Eigen::VectorXd row(n);
    for (int iter = 0; iter < 64; ++iter) {
      double sum = 0.0;
      for (long j = 0; j < n; ++j) {
        row(j) = j == i ? 0.0 : std::exp(-beta * d2(i, j));
        sum += row(j);
      }
      if (sum <= 0) sum = 1e-300;
      double entropy = 0.0;
      for (long j = 0; j < n; ++j) {
        if (j == i || row(j) <= 0) continue;
        const double pj = row(j) / sum;
        entropy -= pj * std::log(pj);
      }
      const double diff = entropy - log_perp;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        beta_lo = beta;
        beta = std::isinf(beta_hi) ? beta * 2 : 0.5 * (beta_lo + beta_hi);
      } else {
        beta_hi = beta;
        beta = 0.5 * (beta_lo + beta_hi);
      }
      for (long j = 0; j < n; ++j) row(j) = 0.0;
    }
    double sum = 0.0;
    for (long j = 0; j < n; ++j) {
      row(j) = j == i ? 0.0 : std::exp(-beta * d2(i, j));
      sum += row(j);
    }
    if (sum <= 0) sum = 1e-300;
    p.row(i) = row.transpose() / sum;
  }
  return p;
}

}  // namespace

Eigen::MatrixXd run_tsne(const Eigen::MatrixXd& x, const TsneConfig& cfg) {
  const long n = x.rows();
  require(n >= 4, "TooFewSamples", "t-SNE needs at least 4 points");

  // Squared pairwise distances.
  Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = sq.replicate(1, n) + sq.transpose().replicate(n, 1) - 2.0 * x * x.transpose();
  d2 = d2.cwiseMax(0.0);

  const double perplexity = std::min(cfg.perplexity, static_cast<double>(n - 1) / 3.0);
  Eigen::MatrixXd pc = conditional_affinities(d2, std::max(2.0, perplexity));
  Eigen::MatrixXd p = (pc + pc.transpose()) / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);

  Prng rng(derive_seed(cfg.seed, "tsne_init"));
  Eigen::MatrixXd y(n, 2);
  for (long i = 0; i < n; ++i) {
    y(i, 0) = rng.normal(0.0, 1e-4);
    y(i, 1) = rng.normal(0.0, 1e-4);
  }

  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
  const double lr = cfg.learning_rate > 0.0
                        ? cfg.learning_rate
                        : std::max(50.0, static_cast<double>(n) / cfg.early_exaggeration);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double exaggeration = iter < cfg.exaggeration_iters ? cfg.early_exaggeration : 1.0;
    const double momentum = iter < cfg.exaggeration_iters ? 0.5 : 0.8;

    // Low-dimensional affinities q_ij with Student-t kernel.
    Eigen::MatrixXd num(n, n);
    double qsum = 0.0;
    for (long i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (long j = i + 1; j < n; ++j) {
        const double dy0 = y(i, 0) - y(j, 0);
        const double dy1 = y(i, 1) - y(j, 1);
        const double v = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
        num(i, j) = v;
        num(j, i) = v;
        qsum += 2.0 * v;
      }
    }
    qsum = std::max(qsum, 1e-300);

    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, 2);
    for (long i = 0; i < n; ++i) {
      for (long j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = num(i, j) / qsum;
        const double mult = (exaggeration * p(i, j) - q) * num(i, j);
        grad(i, 0) += 4.0 * mult * (y(i, 0) - y(j, 0));
        grad(i, 1) += 4.0 * mult * (y(i, 1) - y(j, 1));
      }
    }

    for (long i = 0; i < n; ++i) {
      for (int c = 0; c < 2; ++c) {
        gains(i, c) = (grad(i, c) > 0) == (velocity(i, c) > 0)
                          ? std::max(0.01, gains(i, c) * 0.8)
                          : gains(i, c) + 0.2;
        velocity(i, c) = momentum * velocity(i, c) - lr * gains(i, c) * grad(i, c);
        y(i, c) += velocity(i, c);
      }
    }
    y.rowwise() -= y.colwise().mean();
  }
  return y;
}

namespace {

const char* kPalette[12] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

EmbeddingPlot export_2d_embedding(const Eigen::MatrixXd& embeddings,
                                  const std::vector<int>& labels, const TsneConfig& cfg,
                                  const std::filesystem::path& svg_path) {
  require(embeddings.rows() == static_cast<long>(labels.size()), "ShapeMismatch",
          "one label required per embedding row");
  require(embeddings.rows() >= 10, "TooFewSamples",
          "need at least 10 single-label samples, got " + std::to_string(embeddings.rows()));

  EmbeddingPlot plot;
  plot.labels = labels;
  plot.coords = run_tsne(embeddings, cfg);

  // Rank classes by prevalence (count, then class index for stability).
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  std::vector<std::pair<int, int>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (std::size_t r = 0; r < ranked.size() && r < 12; ++r) {
    plot.panel_classes[r / 4].push_back(ranked[r].first);
  }

  // Three fixed-size panels sharing the global coordinate range.
  const double xmin = plot.coords.col(0).minCoeff(), xmax = plot.coords.col(0).maxCoeff();
  const double ymin = plot.coords.col(1).minCoeff(), ymax = plot.coords.col(1).maxCoeff();
  const double xspan = std::max(1e-9, xmax - xmin), yspan = std::max(1e-9, ymax - ymin);
  const int pw = 320, ph = 320, margin = 20, legend_h = 70;
  const char* titles[3] = {"Most prevalent", "Mid prevalent", "Least prevalent"};

  std::ofstream out(svg_path);
  require(out.good(), "IoError", "cannot write plot: " + svg_path.string());
  const int width = 3 * pw + 4 * margin;
  const int height = ph + 2 * margin + legend_h;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (int panel = 0; panel < 3; ++panel) {
    const int x0 = margin + panel * (pw + margin);
    const int y0 = margin;
    out << "<g>\n<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << pw << "\" height=\""
        << ph << "\" fill=\"none\" stroke=\"#444\"/>\n";
    out << "<text x=\"" << x0 + pw / 2 << "\" y=\"" << y0 - 5
        << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << titles[panel]
        << "</text>\n";
    for (long i = 0; i < plot.coords.rows(); ++i) {
      const int cls = labels[static_cast<std::size_t>(i)];
      const auto& members = plot.panel_classes[panel];
      const auto it = std::find(members.begin(), members.end(), cls);
      if (it == members.end()) continue;
      const std::size_t color_idx =
          static_cast<std::size_t>(panel * 4 + (it - members.begin())) % 12;
      const double px = x0 + 8 + (plot.coords(i, 0) - xmin) / xspan * (pw - 16);
      const double py = y0 + 8 + (plot.coords(i, 1) - ymin) / yspan * (ph - 16);
      out << "<circle cx=\"" << fmt(px) << "\" cy=\"" << fmt(py) << "\" r=\"2.5\" fill=\""
          << kPalette[color_idx] << "\" fill-opacity=\"0.8\"/>\n";
    }
    // Legend below the panel.
    int ly = margin + ph + 16;
    for (std::size_t m = 0; m < plot.panel_classes[panel].size(); ++m) {
      const int cls = plot.panel_classes[panel][m];
      const std::size_t color_idx = static_cast<std::size_t>(panel * 4 + m) % 12;
      out << "<circle cx=\"" << x0 + 8 << "\" cy=\"" << ly << "\" r=\"3\" fill=\""
          << kPalette[color_idx] << "\"/>\n";
      out << "<text x=\"" << x0 + 16 << "\" y=\"" << ly + 4
          << "\" font-size=\"10\" font-family=\"sans-serif\">"
          << (cls >= 0 && cls < kNumLabels ? condition_names()[static_cast<std::size_t>(cls)]
                                           : std::to_string(cls))
          << "</text>\n";
      ly += 14;
    }
    out << "</g>\n";
  }
  out << "</svg>\n";
  require(out.good(), "IoError", "plot write failed");
  return plot;
}

}  // namespace mmsn
