#pragma once

#include <functional>
#include <optional>
#include <string>

#include "mmsn/heads.hpp"
#include "mmsn/vit.hpp"

namespace mmsn::nn {

struct ModelConfig {
  VitConfig vit;
  int patch_dim = 0;
  int max_tokens = 0;
  int n_proj = 256;
  int head_hidden = 2048;
  int ehr_out = 128;
  std::optional<int> n_ehr;  // absent -> no EHR branch is allocated
  int prototypes = 1024;     // K

  void validate() const;
};

/// All parameters of the pretraining network. The anchor encoder and head h
/// are trained; the target encoder and head h+ track them by EMA; the EHR
/// encoder and fusion map exist only when n_ehr is set.
struct ModelState {
  ModelConfig cfg;

  VitParams anchor;
  VitParams target;
  std::optional<LinearParams> ehr;     // n_ehr -> ehr_out
  std::optional<LinearParams> fusion;  // (ehr_out + D) -> D
  MlpHeadParams head_anchor;           // D -> n_proj
  MlpHeadParams head_target;
  Parameter prototypes;                // K x n_proj
  double ema_momentum = 0.996;

  ModelState() = default;
  ModelState(const ModelConfig& cfg, std::uint64_t seed);

  bool has_ehr() const { return ehr.has_value(); }

  /// Trained parameters: anchor encoder, f_ehr, g, h, prototypes.
  void visit_trainable(const std::function<void(Parameter&)>& fn);
  /// EMA-tracked parameters: target encoder and h+.
  void visit_ema(const std::function<void(Parameter&)>& fn);
  /// Everything, in a fixed order (used for checkpointing).
  void visit_all(const std::function<void(Parameter&)>& fn);

  long trainable_parameter_count();

  /// One EMA step: target tracks anchor, h+ tracks h.
  void ema_step(double momentum);
  void ema_step() { ema_step(ema_momentum); }
};

}  // namespace mmsn::nn
