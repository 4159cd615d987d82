#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mmsn {

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 0.0;  // <= 0: auto, max(50, N / early_exaggeration)
  double early_exaggeration = 12.0;
  int exaggeration_iters = 250;
  std::uint64_t seed = 0;
};

/// Exact (O(N^2)) t-SNE to 2 dimensions. Perplexity is reduced
/// automatically when N is small (it must stay below (N-1)/3).
Eigen::MatrixXd run_tsne(const Eigen::MatrixXd& x, const TsneConfig& cfg);

/// Prevalence-tier panels of single-label samples: ranks classes by how
/// often they appear, then groups ranks 1-4, 5-8 and 9-12 into three
/// panels.
struct EmbeddingPlot {
  Eigen::MatrixXd coords;          // N x 2
  std::vector<int> labels;         // single label per sample
  std::vector<int> panel_classes[3];
};

/// `labels` holds the single class index of every embedding row. Requires
/// at least 10 samples. Writes an SVG scatter with three panels.
EmbeddingPlot export_2d_embedding(const Eigen::MatrixXd& embeddings,
                                  const std::vector<int>& labels, const TsneConfig& cfg,
                                  const std::filesystem::path& svg_path);

}  // namespace mmsn
