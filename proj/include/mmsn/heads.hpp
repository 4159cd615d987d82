#pragma once

#include <string>

#include "mmsn/tape.hpp"

namespace mmsn::nn {

/// Affine map: y = x W + b.
struct LinearParams {
  Parameter w, b;

  LinearParams() = default;
  LinearParams(int in, int out, const std::string& prefix, std::uint64_t seed);

  int in_dim() const { return static_cast<int>(w.value.rows()); }
  int out_dim() const { return static_cast<int>(w.value.cols()); }
  void visit(const std::function<void(Parameter&)>& fn) { fn(w); fn(b); }
  long parameter_count() const { return w.size() + b.size(); }
};

Var linear(Tape& tape, Var x, LinearParams& p, bool trainable);

/// Three affine layers with layer norm + GELU between them:
/// in -> hidden -> hidden -> out.
struct MlpHeadParams {
  LinearParams l1, l2, l3;
  Parameter ln1_g, ln1_b, ln2_g, ln2_b;

  MlpHeadParams() = default;
  MlpHeadParams(int in, int hidden, int out, const std::string& prefix, std::uint64_t seed);

  void visit(const std::function<void(Parameter&)>& fn);
  void copy_values_from(const MlpHeadParams& src);
  long parameter_count() const;
};

Var mlp_head(Tape& tape, Var x, MlpHeadParams& p, bool trainable);

/// Concatenates (v_ehr, v_cxr) in that order and projects with g.
Var fuse(Tape& tape, Var v_ehr, Var v_cxr, LinearParams& g, bool trainable);

/// t <- m * t + (1 - m) * a, elementwise, for every parameter pair.
void ema_update(Parameter& target, const Parameter& anchor, double momentum);

}  // namespace mmsn::nn
