#include "mmsn/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mmsn/common.hpp"
#include "mmsn/rng.hpp"

namespace mmsn {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  require(j.is_object(), "ConfigError", where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      fail("ConfigError", "unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void get_arr3(const json& j, const char* key, std::array<double, 3>& out) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  require(a.is_array() && a.size() == 3, "ConfigError",
          std::string(key) + " must be an array of 3 numbers");
  for (int i = 0; i < 3; ++i) out[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)];
}

void get_arr2(const json& j, const char* key, double& lo, double& hi) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  require(a.is_array() && a.size() == 2, "ConfigError",
          std::string(key) + " must be an array of 2 numbers");
  lo = a[0];
  hi = a[1];
}

}  // namespace

ViewConfig view_from_json(const nlohmann::json& j) {
  check_keys(j, {"image_size", "patch_size", "focal_size", "n_anchor_views", "n_random_masked",
                 "mask_ratio", "hflip_prob", "global_scale", "focal_scale", "norm_mean",
                 "norm_std", "extra_focal_drop"},
             "view");
  ViewConfig c;
  get_to(j, "image_size", c.image_size);
  get_to(j, "patch_size", c.patch_size);
  get_to(j, "focal_size", c.focal_size);
  get_to(j, "n_anchor_views", c.n_anchor_views);
  get_to(j, "n_random_masked", c.n_random_masked);
  get_to(j, "mask_ratio", c.mask_ratio);
  get_to(j, "hflip_prob", c.hflip_prob);
  get_arr2(j, "global_scale", c.global_scale_min, c.global_scale_max);
  get_arr2(j, "focal_scale", c.focal_scale_min, c.focal_scale_max);
  get_arr3(j, "norm_mean", c.norm_mean);
  get_arr3(j, "norm_std", c.norm_std);
  get_to(j, "extra_focal_drop", c.extra_focal_drop);
  c.validate();
  return c;
}

nn::VitConfig vit_from_json(const nlohmann::json& j) {
  check_keys(j, {"layers", "hidden", "mlp", "heads"}, "model overrides");
  nn::VitConfig c;
  get_to(j, "layers", c.layers);
  get_to(j, "hidden", c.hidden);
  get_to(j, "mlp", c.mlp);
  get_to(j, "heads", c.heads);
  return c;
}

ModelSection model_from_json(const nlohmann::json& j) {
  check_keys(j, {"preset", "layers", "hidden", "mlp", "heads", "n_proj", "head_hidden", "ehr_out"},
             "model");
  ModelSection c;
  get_to(j, "preset", c.preset);
  c.vit = nn::VitConfig::preset(c.preset);
  get_to(j, "layers", c.vit.layers);
  get_to(j, "hidden", c.vit.hidden);
  get_to(j, "mlp", c.vit.mlp);
  get_to(j, "heads", c.vit.heads);
  get_to(j, "n_proj", c.n_proj);
  get_to(j, "head_hidden", c.head_hidden);
  get_to(j, "ehr_out", c.ehr_out);
  c.vit.validate();
  require(c.n_proj >= 1 && c.head_hidden >= 1 && c.ehr_out >= 1, "ConfigError",
          "model dims must be positive");
  return c;
}

LossConfig loss_from_json(const nlohmann::json& j) {
  check_keys(j, {"prototypes", "tau", "tau_plus", "lambda"}, "loss");
  LossConfig c;
  get_to(j, "prototypes", c.prototypes);
  get_to(j, "tau", c.tau);
  get_to(j, "tau_plus", c.tau_plus);
  get_to(j, "lambda", c.lambda);
  require(c.prototypes >= 2, "ConfigError", "need at least 2 prototypes");
  require(c.tau > 0 && c.tau_plus > 0, "ConfigError", "temperatures must be positive");
  return c;
}

PretrainSection pretrain_from_json(const nlohmann::json& j) {
  check_keys(j, {"batch_size", "max_epochs", "max_steps", "learning_rate", "weight_decay",
                 "schedule", "early_stop_patience", "early_stop_min_delta", "ema_momentum",
                 "grad_clip", "features"},
             "pretrain");
  PretrainSection c;
  get_to(j, "batch_size", c.batch_size);
  get_to(j, "max_epochs", c.max_epochs);
  get_to(j, "max_steps", c.max_steps);
  get_to(j, "learning_rate", c.learning_rate);
  get_to(j, "weight_decay", c.weight_decay);
  get_to(j, "schedule", c.schedule);
  get_to(j, "early_stop_patience", c.early_stop_patience);
  get_to(j, "early_stop_min_delta", c.early_stop_min_delta);
  get_to(j, "ema_momentum", c.ema_momentum);
  get_to(j, "grad_clip", c.grad_clip);
  get_to(j, "features", c.features);
  require(c.batch_size >= 1 && c.max_epochs >= 1, "ConfigError", "bad pretrain sizes");
  require(c.schedule == "cosine_annealing", "ConfigError",
          "unknown schedule '" + c.schedule + "'");
  require(c.learning_rate > 0 && c.weight_decay >= 0, "ConfigError", "bad optimizer settings");
  require(c.ema_momentum >= 0 && c.ema_momentum <= 1, "ConfigError", "ema_momentum in [0,1]");
  parse_features_field(c.features);  // validates
  return c;
}

EvalSection eval_from_json(const nlohmann::json& j) {
  check_keys(j, {"mode", "cosine_lrs", "rop_lrs", "replicates", "max_epochs", "batch_size",
                 "patience", "min_delta", "n_bootstrap", "jobs"},
             "eval");
  EvalSection c;
  get_to(j, "mode", c.mode);
  get_to(j, "cosine_lrs", c.cosine_lrs);
  get_to(j, "rop_lrs", c.rop_lrs);
  get_to(j, "replicates", c.replicates);
  get_to(j, "max_epochs", c.max_epochs);
  get_to(j, "batch_size", c.batch_size);
  get_to(j, "patience", c.patience);
  get_to(j, "min_delta", c.min_delta);
  get_to(j, "n_bootstrap", c.n_bootstrap);
  get_to(j, "jobs", c.jobs);
  require(c.mode == "linear" || c.mode == "finetune", "ConfigError",
          "eval mode must be linear or finetune");
  require(!c.cosine_lrs.empty() && !c.rop_lrs.empty(), "ConfigError", "empty learning-rate grid");
  require(c.replicates >= 1 && c.max_epochs >= 1 && c.batch_size >= 1, "ConfigError",
          "bad eval sizes");
  require(c.n_bootstrap >= 100, "ConfigError", "n_bootstrap must be >= 100");
  require(c.jobs >= 1, "ConfigError", "jobs must be >= 1");
  return c;
}

RunConfig parse_run_config(const nlohmann::json& j) {
  check_keys(j, {"seed", "data", "view", "model", "loss", "pretrain", "eval"}, "run config");
  RunConfig c;
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, {"train_manifest", "val_manifest", "test_manifest"}, "data");
    get_to(d, "train_manifest", c.data.train_manifest);
    get_to(d, "val_manifest", c.data.val_manifest);
    get_to(d, "test_manifest", c.data.test_manifest);
  }
  if (j.contains("view")) c.view = view_from_json(j.at("view"));
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"));
  if (j.contains("pretrain")) c.pretrain = pretrain_from_json(j.at("pretrain"));
  if (j.contains("eval")) c.eval = eval_from_json(j.at("eval"));
  c.model.vit.patch_size = c.view.patch_size;
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "ConfigError", "cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail("ConfigError", "config parse error in " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

nlohmann::json to_json(const ViewConfig& c) {
  return {{"image_size", c.image_size},
          {"patch_size", c.patch_size},
          {"focal_size", c.focal_size},
          {"n_anchor_views", c.n_anchor_views},
          {"n_random_masked", c.n_random_masked},
          {"mask_ratio", c.mask_ratio},
          {"hflip_prob", c.hflip_prob},
          {"global_scale", {c.global_scale_min, c.global_scale_max}},
          {"focal_scale", {c.focal_scale_min, c.focal_scale_max}},
          {"norm_mean", c.norm_mean},
          {"norm_std", c.norm_std},
          {"extra_focal_drop", c.extra_focal_drop}};
}

nlohmann::json to_json(const nn::VitConfig& c) {
  return {{"layers", c.layers}, {"hidden", c.hidden}, {"mlp", c.mlp}, {"heads", c.heads}};
}

nlohmann::json to_json(const ModelSection& c) {
  json j = to_json(c.vit);
  j["preset"] = c.preset;
  j["n_proj"] = c.n_proj;
  j["head_hidden"] = c.head_hidden;
  j["ehr_out"] = c.ehr_out;
  return j;
}

nlohmann::json to_json(const LossConfig& c) {
  return {{"prototypes", c.prototypes},
          {"tau", c.tau},
          {"tau_plus", c.tau_plus},
          {"lambda", c.lambda}};
}

nlohmann::json to_json(const PretrainSection& c) {
  return {{"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"max_steps", c.max_steps},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"schedule", c.schedule},
          {"early_stop_patience", c.early_stop_patience},
          {"early_stop_min_delta", c.early_stop_min_delta},
          {"ema_momentum", c.ema_momentum},
          {"grad_clip", c.grad_clip},
          {"features", c.features}};
}

nlohmann::json to_json(const EvalSection& c) {
  return {{"mode", c.mode},
          {"cosine_lrs", c.cosine_lrs},
          {"rop_lrs", c.rop_lrs},
          {"replicates", c.replicates},
          {"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},
          {"patience", c.patience},
          {"min_delta", c.min_delta},
          {"n_bootstrap", c.n_bootstrap},
          {"jobs", c.jobs}};
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"data",
           {{"train_manifest", c.data.train_manifest},
            {"val_manifest", c.data.val_manifest},
            {"test_manifest", c.data.test_manifest}}},
          {"view", to_json(c.view)},
          {"model", to_json(c.model)},
          {"loss", to_json(c.loss)},
          {"pretrain", to_json(c.pretrain)},
          {"eval", to_json(c.eval)}};
}

std::string config_hash(const nlohmann::json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream ss;
  ss << std::hex << (h & 0xffffffffULL);
  std::string out = ss.str();
  while (out.size() < 8) out = "0" + out;
  return out;
}

std::optional<FeatureGroupSpec> parse_features_field(const std::string& text) {
  if (text == "none") return std::nullopt;
  return FeatureGroupSpec::parse(text);
}

}  // namespace mmsn
