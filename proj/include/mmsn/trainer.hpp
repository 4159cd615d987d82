#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmsn/dataset.hpp"
#include "mmsn/model_state.hpp"
#include "mmsn/optimizer.hpp"
#include "mmsn/prototype_loss.hpp"
#include "mmsn/run_config.hpp"
#include "mmsn/views.hpp"

namespace mmsn {

/// One pretraining input: the raw image plus its encoded tabular vector
/// (size 0 when the run has no EHR branch).
struct TrainingExample {
  Image image;
  Eigen::VectorXd x_ehr;
};

struct TrainingSet {
  std::vector<TrainingExample> examples;
};

/// Loads images referenced by a manifest and encodes the selected features.
TrainingSet load_training_set(const DatasetManifest& manifest,
                              const std::optional<FeatureGroupSpec>& features);
TrainingSet training_set_from_samples(const std::vector<Sample>& samples,
                                      const std::optional<FeatureGroupSpec>& features);

/// Minimum-tracking early stopper: stops after `patience` consecutive
/// observations that fail to improve the best value by min_delta.
struct EarlyStopper {
  int patience = 5;
  double min_delta = 1e-5;
  double best = 0.0;
  bool has_best = false;
  int stagnant = 0;

  /// Returns true when training should stop after this observation.
  bool observe(double value) {
    if (!has_best || value < best - min_delta) {
      best = value;
      has_best = true;
      stagnant = 0;
      return false;
    }
    return ++stagnant >= patience;
  }
};

struct EngineConfig {
  ViewConfig view;
  nn::VitConfig vit;
  int n_proj = 256;
  int head_hidden = 2048;
  int ehr_out = 128;
  LossConfig loss;
  PretrainSection pretrain;
  std::optional<FeatureGroupSpec> features;
  std::uint64_t seed = 0;
  /// When true, the step runs through an instantiation with the EHR branch
  /// excluded at compile time (only legal with no features).
  bool compiled_vanilla = false;
};

struct TrainResult {
  std::filesystem::path checkpoint_path;
  std::vector<double> epoch_losses;
  std::vector<double> step_losses;
  int epochs_run = 0;
  long steps_run = 0;
  bool early_stopped = false;
};

/// Precomputed views and encoded tabular vectors of one batch.
struct StepInputs {
  std::vector<ViewBundle> bundles;
  std::vector<Eigen::VectorXd> x_ehr;  // size-0 vectors when unused
};
StepInputs build_step_inputs(const std::vector<const TrainingExample*>& batch,
                             const std::vector<std::uint64_t>& view_seeds, const ViewConfig& view);

/// Frozen-branch assignments, one row per sample (constants of the step).
Eigen::MatrixXd compute_target_assignments(nn::ModelState& state, const StepInputs& inputs,
                                           double tau_plus);

/// Anchor-branch forward and objective over prepared inputs. With
/// `trainable` false this evaluates the same graph without any gradient
/// bookkeeping (used for finite-difference probing).
nn::LossGraph anchor_branch_loss(nn::Tape& tape, nn::ModelState& state, const StepInputs& inputs,
                                 const Eigen::MatrixXd& p_target, const LossConfig& loss,
                                 bool trainable);

class PretrainEngine {
 public:
  PretrainEngine(const EngineConfig& cfg, nlohmann::json config_snapshot);

  /// Restores parameters, optimizer moments, and loop counters.
  static std::unique_ptr<PretrainEngine> from_checkpoint(const std::filesystem::path& path);

  /// One optimizer step over a batch; per-example view seeds fix all
  /// augmentation randomness.
  LossBreakdown train_step(const std::vector<const TrainingExample*>& batch,
                           const std::vector<std::uint64_t>& view_seeds, double lr);

  /// Full loop: shuffling, cosine schedule, early stopping, step logging,
  /// final checkpoint. `stop_after_epochs` (>0) pauses the run early so it
  /// can be resumed from the written checkpoint.
  TrainResult train(const TrainingSet& data, const std::filesystem::path& run_dir,
                    int stop_after_epochs = -1);

  void save_checkpoint(const std::filesystem::path& path) const;

  nn::ModelState& state() { return *state_; }
  const EngineConfig& config() const { return cfg_; }
  const nn::AdamW& optimizer() const { return opt_; }
  int completed_epochs() const { return epoch_; }
  long global_step() const { return step_; }

 private:
  template <bool WithEhr>
  LossBreakdown step_impl(const std::vector<const TrainingExample*>& batch,
                          const std::vector<std::uint64_t>& view_seeds, double lr);

  EngineConfig cfg_;
  nlohmann::json snapshot_;
  std::unique_ptr<nn::ModelState> state_;
  nn::AdamW opt_;
  int epoch_ = 0;
  long step_ = 0;
  EarlyStopper stopper_;
  bool stop_requested_ = false;
};

/// Loads a frozen model for downstream use.
struct LoadedModel {
  EngineConfig cfg;
  std::unique_ptr<nn::ModelState> state;
  nlohmann::json meta;
};
LoadedModel load_model(const std::filesystem::path& checkpoint_path);

}  // namespace mmsn
