#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

#include "mmsn/dataset.hpp"
#include "mmsn/metrics.hpp"
#include "mmsn/run_config.hpp"
#include "mmsn/trainer.hpp"

namespace mmsn {

/// Frozen-encoder embeddings of a manifest, order-aligned with labels.
struct EmbeddingSet {
  Eigen::MatrixXd x;  // N x D
  Eigen::MatrixXd y;  // N x 14
  std::vector<std::string> sample_ids;
};

/// Runs the target encoder over deterministic inference views (center crop
/// only); no EHR input is ever used downstream.
EmbeddingSet extract_embeddings(const DatasetManifest& manifest, const LoadedModel& model);

/// Images + labels of a manifest, cached for fine-tuning.
struct ImageSet {
  std::vector<Image> images;
  Eigen::MatrixXd y;
  std::vector<std::string> sample_ids;
};
ImageSet load_image_set(const DatasetManifest& manifest);

/// Affine multi-label classifier D -> 14 (per-label sigmoid).
struct LinearProbe {
  Eigen::MatrixXd w;     // D x L
  Eigen::RowVectorXd b;  // 1 x L
};
Eigen::MatrixXd probe_logits(const LinearProbe& p, const Eigen::MatrixXd& x);

enum class ProbeScheduler { cosine_earlystop, reduce_on_plateau };
const char* to_string(ProbeScheduler s);

struct GridRun {
  ProbeScheduler scheduler = ProbeScheduler::cosine_earlystop;
  double lr = 1e-3;
  int replicate = 0;
  std::uint64_t probe_seed = 0;
};

/// The per-mode grid: cosine lrs x cosine+earlystop plus rop lrs x
/// reduce-on-plateau, each replicated with distinct probe seeds.
std::vector<GridRun> build_grid(const EvalSection& eval, std::uint64_t seed);

/// What one grid run produces; `encoder` is set only in finetune mode.
struct TrainedProbe {
  LinearProbe fc;
  std::shared_ptr<nn::VitParams> encoder;
  double val_auroc = 0.0;
  int best_epoch = -1;
  std::vector<int> degenerate_labels;
};

TrainedProbe train_linear_probe(const EmbeddingSet& train, const EmbeddingSet& val,
                                const GridRun& run, const EvalSection& eval);

TrainedProbe train_finetune_probe(const LoadedModel& model, const ImageSet& train,
                                  const ImageSet& val, const GridRun& run,
                                  const EvalSection& eval);

/// Full protocol for one mode: the grid (10 runs by default), validation
/// selection, one test evaluation of the winner.
struct ProbeRunRecord {
  GridRun cfg;
  double val_auroc = 0.0;
  int best_epoch = -1;
};
struct ProtocolResult {
  std::vector<ProbeRunRecord> runs;
  int best_index = -1;
  MetricReport test_report;
};

using EvalLogFn = std::function<void(const nlohmann::json&)>;

ProtocolResult run_protocol(const std::string& mode, const LoadedModel& model,
                            const DatasetManifest& train, const DatasetManifest& val,
                            const DatasetManifest& test, const EvalSection& eval,
                            std::uint64_t seed, const EvalLogFn& log);

/// Low-data regime: per fraction, 5 seeded subsets fine-tuned with a fixed
/// configuration; the best run per fraction (by validation AUROC) is
/// flagged. Every run is evaluated on the full test set.
struct LowDataRunRecord {
  double fraction = 0.0;
  int subset_index = 0;
  double val_auroc = 0.0;
  bool selected = false;
  MetricReport test_report;
};

std::vector<LowDataRunRecord> low_data_protocol(const LoadedModel& model,
                                                const DatasetManifest& train,
                                                const DatasetManifest& val,
                                                const DatasetManifest& test,
                                                const std::vector<double>& fractions,
                                                const GridRun& best_cfg, const EvalSection& eval,
                                                std::uint64_t seed, const EvalLogFn& log);

}  // namespace mmsn
