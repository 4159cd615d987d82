#pragma once

#include <string>
#include <vector>

#include "mmsn/tape.hpp"

namespace mmsn::nn {

struct VitConfig {
  int layers = 12;
  int hidden = 384;   // D
  int mlp = 1536;
  int heads = 6;
  int patch_size = 16;

  /// Presets: vit-t, vit-s, vit-b (per the standard variant table) and
  /// vit-test (2 layers, D=32) for fast checks.
  static VitConfig preset(const std::string& name);
  void validate() const;
};

struct VitBlockParams {
  Parameter ln1_g, ln1_b;
  Parameter qkv_w, qkv_b;
  Parameter proj_w, proj_b;
  Parameter ln2_g, ln2_b;
  Parameter fc1_w, fc1_b;
  Parameter fc2_w, fc2_b;
};

/// Full parameter set of one ViT encoder. The positional table covers a
/// fixed maximum grid; views with fewer patches select the rows matching
/// their kept grid positions (embed-then-drop).
struct VitParams {
  VitConfig cfg;
  int patch_dim = 0;
  int max_tokens = 0;  // full grid + class token

  Parameter patch_w, patch_b;
  Parameter cls;  // 1 x D, zero-initialized
  Parameter pos;  // max_tokens x D
  std::vector<VitBlockParams> blocks;
  Parameter lnf_g, lnf_b;

  VitParams() = default;
  VitParams(const VitConfig& cfg, int patch_dim, int max_tokens, const std::string& prefix,
            std::uint64_t seed);

  void visit(const std::function<void(Parameter&)>& fn);
  void visit(const std::function<void(const Parameter&)>& fn) const;
  void copy_values_from(const VitParams& src);
  long parameter_count() const;
};

/// Encodes one view: rows of `patches` are the kept patch vectors and
/// `grid_indices` their positions in the full grid. Returns the class-token
/// embedding (1 x D). `trainable` controls whether gradients flow.
Var vit_forward(Tape& tape, const Eigen::MatrixXd& patches, const std::vector<int>& grid_indices,
                VitParams& params, bool trainable);

/// Gradient-free forward for the frozen branch.
Var vit_forward_frozen(Tape& tape, const Eigen::MatrixXd& patches,
                       const std::vector<int>& grid_indices, const VitParams& params);

/// Fills a weight matrix with N(0, 1/fan_in) draws from a stream derived
/// from (seed, name); biases/norms get fixed values elsewhere.
void init_fan_in(Parameter& p, int fan_in, std::uint64_t seed);

}  // namespace mmsn::nn
