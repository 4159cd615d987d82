#include "mmsn/model_state.hpp"

#include "mmsn/common.hpp"
#include "mmsn/rng.hpp"

namespace mmsn::nn {

void ModelConfig::validate() const {
  vit.validate();
  require(patch_dim >= 1 && max_tokens >= 2, "InvalidArgument", "bad model input geometry");
  require(n_proj >= 1 && head_hidden >= 1 && ehr_out >= 1, "InvalidArgument",
          "bad head dimensions");
  require(prototypes >= 2, "InvalidArgument", "need at least 2 prototypes");
  if (n_ehr) require(*n_ehr >= 1, "InvalidArgument", "n_ehr must be positive when set");
}

ModelState::ModelState(const ModelConfig& config, std::uint64_t seed) : cfg(config) {
  cfg.validate();
  anchor = VitParams(cfg.vit, cfg.patch_dim, cfg.max_tokens, "anchor", seed);
  target = VitParams(cfg.vit, cfg.patch_dim, cfg.max_tokens, "target", seed);
  target.copy_values_from(anchor);  // EMA starts from an exact copy

  if (cfg.n_ehr) {
    ehr.emplace(*cfg.n_ehr, cfg.ehr_out, "ehr", seed);
    fusion.emplace(cfg.ehr_out + cfg.vit.hidden, cfg.vit.hidden, "fusion", seed);
  }

  head_anchor = MlpHeadParams(cfg.vit.hidden, cfg.head_hidden, cfg.n_proj, "head_anchor", seed);
  head_target = MlpHeadParams(cfg.vit.hidden, cfg.head_hidden, cfg.n_proj, "head_target", seed);
  head_target.copy_values_from(head_anchor);

  prototypes = Parameter("prototypes/q",
                         Eigen::MatrixXd::Zero(cfg.prototypes, cfg.n_proj));
  {
    Prng rng(derive_seed(derive_seed(seed, "init"), prototypes.name));
    for (long c = 0; c < prototypes.value.cols(); ++c) {
      for (long r = 0; r < prototypes.value.rows(); ++r) {
        prototypes.value(r, c) = rng.normal(0.0, 1.0);
      }
    }
  }
}

void ModelState::visit_trainable(const std::function<void(Parameter&)>& fn) {
  anchor.visit(fn);
  if (ehr) ehr->visit(fn);
  if (fusion) fusion->visit(fn);
  head_anchor.visit(fn);
  fn(prototypes);
}

void ModelState::visit_ema(const std::function<void(Parameter&)>& fn) {
  target.visit(fn);
  head_target.visit(fn);
}

void ModelState::visit_all(const std::function<void(Parameter&)>& fn) {
  visit_trainable(fn);
  visit_ema(fn);
}

long ModelState::trainable_parameter_count() {
  long n = 0;
  visit_trainable([&n](Parameter& p) { n += p.size(); });
  return n;
}

void ModelState::ema_step(double momentum) {
  std::vector<Parameter*> src;
  anchor.visit([&src](Parameter& p) { src.push_back(&p); });
  head_anchor.visit([&src](Parameter& p) { src.push_back(&p); });
  std::size_t i = 0;
  visit_ema([&](Parameter& p) {
    require(i < src.size(), "ShapeMismatch", "EMA parameter lists out of sync");
    ema_update(p, *src[i], momentum);
    ++i;
  });
  require(i == src.size(), "ShapeMismatch", "EMA parameter lists out of sync");
}

}  // namespace mmsn::nn
