#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmsn/ehr_features.hpp"
#include "mmsn/views.hpp"
#include "mmsn/vit.hpp"

namespace mmsn {

struct DataConfig {
  std::string train_manifest;
  std::string val_manifest;
  std::string test_manifest;
};

struct LossConfig {
  int prototypes = 1024;  // K
  double tau = 0.1;
  double tau_plus = 0.025;
  double lambda = 1.0;
};

struct ModelSection {
  std::string preset = "vit-s";
  nn::VitConfig vit = nn::VitConfig::preset("vit-s");
  int n_proj = 256;
  int head_hidden = 2048;
  int ehr_out = 128;
};

struct PretrainSection {
  int batch_size = 64;
  int max_epochs = 100;
  long max_steps = 0;  // 0 = no step cap
  double learning_rate = 1e-4;
  double weight_decay = 1e-3;
  std::string schedule = "cosine_annealing";
  int early_stop_patience = 5;
  double early_stop_min_delta = 1e-5;  // on epoch-mean training loss
  double ema_momentum = 0.996;
  double grad_clip = 0.0;  // off by default
  std::string features = "none";
};

struct EvalSection {
  std::string mode = "linear";
  std::vector<double> cosine_lrs{1e-3, 5e-4, 1e-4};
  std::vector<double> rop_lrs{5e-4, 1e-4};
  int replicates = 2;  // seeds per grid config; 5 configs x 2 = 10 runs/mode
  int max_epochs = 50;
  int batch_size = 64;
  int patience = 5;          // on validation AUROC
  double min_delta = 1e-4;
  int n_bootstrap = 1000;
  int jobs = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  ViewConfig view;
  ModelSection model;
  LossConfig loss;
  PretrainSection pretrain;
  EvalSection eval;
};

/// Strict parse: unknown keys anywhere are rejected.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

nlohmann::json to_json(const RunConfig& c);
nlohmann::json to_json(const ViewConfig& c);
nlohmann::json to_json(const nn::VitConfig& c);
nlohmann::json to_json(const LossConfig& c);
nlohmann::json to_json(const ModelSection& c);
nlohmann::json to_json(const PretrainSection& c);
nlohmann::json to_json(const EvalSection& c);

ViewConfig view_from_json(const nlohmann::json& j);
nn::VitConfig vit_from_json(const nlohmann::json& j);
LossConfig loss_from_json(const nlohmann::json& j);
ModelSection model_from_json(const nlohmann::json& j);
PretrainSection pretrain_from_json(const nlohmann::json& j);
EvalSection eval_from_json(const nlohmann::json& j);

/// Stable short hash of a config document, for run-directory names.
std::string config_hash(const nlohmann::json& j);

/// "none" -> nullopt, otherwise a parsed feature group.
std::optional<FeatureGroupSpec> parse_features_field(const std::string& text);

}  // namespace mmsn
