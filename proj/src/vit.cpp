#include "mmsn/vit.hpp"

#include <cmath>

#include "mmsn/common.hpp"
#include "mmsn/rng.hpp"

namespace mmsn::nn {

VitConfig VitConfig::preset(const std::string& name) {
  VitConfig c;
  if (name == "vit-b") {
    c = {12, 768, 3072, 6, 16};
  } else if (name == "vit-s") {
    c = {12, 384, 1536, 6, 16};
  } else if (name == "vit-t") {
    c = {12, 192, 768, 6, 16};
  } else if (name == "vit-test") {
    c = {2, 32, 128, 4, 16};
  } else {
    fail("UnknownPreset", "unknown ViT preset '" + name + "'");
  }
  return c;
}

void VitConfig::validate() const {
  require(layers >= 1 && hidden >= 1 && mlp >= 1 && heads >= 1 && patch_size >= 1,
          "InvalidArgument", "ViT dimensions must be positive");
  require(hidden % heads == 0, "InvalidArgument", "hidden size must divide evenly across heads");
}

void init_fan_in(Parameter& p, int fan_in, std::uint64_t seed) {
  Prng rng(derive_seed(derive_seed(seed, "init"), p.name));
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (long c = 0; c < p.value.cols(); ++c) {
    for (long r = 0; r < p.value.rows(); ++r) p.value(r, c) = rng.normal(0.0, s);
  }
}

namespace {

Parameter make_param(const std::string& name, long rows, long cols) {
  return Parameter(name, Eigen::MatrixXd::Zero(rows, cols));
}

void init_ones(Parameter& p) { p.value.setOnes(); }

}  // namespace

VitParams::VitParams(const VitConfig& config, int pdim, int mtokens, const std::string& prefix,
                     std::uint64_t seed)
    : cfg(config), patch_dim(pdim), max_tokens(mtokens) {
  cfg.validate();
  require(patch_dim >= 1 && max_tokens >= 2, "InvalidArgument", "bad ViT input geometry");
  const int d = cfg.hidden;

  patch_w = make_param(prefix + "/patch_w", patch_dim, d);
  init_fan_in(patch_w, patch_dim, seed);
  patch_b = make_param(prefix + "/patch_b", 1, d);
  cls = make_param(prefix + "/cls", 1, d);
  pos = make_param(prefix + "/pos", max_tokens, d);
  {
    Prng rng(derive_seed(derive_seed(seed, "init"), pos.name));
    for (long c = 0; c < pos.value.cols(); ++c) {
      for (long r = 0; r < pos.value.rows(); ++r) pos.value(r, c) = rng.normal(0.0, 0.02);
    }
  }

  blocks.resize(static_cast<std::size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    auto& b = blocks[static_cast<std::size_t>(l)];
    const std::string bp = prefix + "/blocks/" + std::to_string(l);
    b.ln1_g = make_param(bp + "/ln1_g", 1, d);
    init_ones(b.ln1_g);
    b.ln1_b = make_param(bp + "/ln1_b", 1, d);
    b.qkv_w = make_param(bp + "/qkv_w", d, 3 * d);
    init_fan_in(b.qkv_w, d, seed);
    b.qkv_b = make_param(bp + "/qkv_b", 1, 3 * d);
    b.proj_w = make_param(bp + "/proj_w", d, d);
    init_fan_in(b.proj_w, d, seed);
    b.proj_b = make_param(bp + "/proj_b", 1, d);
    b.ln2_g = make_param(bp + "/ln2_g", 1, d);
    init_ones(b.ln2_g);
    b.ln2_b = make_param(bp + "/ln2_b", 1, d);
    b.fc1_w = make_param(bp + "/fc1_w", d, cfg.mlp);
    init_fan_in(b.fc1_w, d, seed);
    b.fc1_b = make_param(bp + "/fc1_b", 1, cfg.mlp);
    b.fc2_w = make_param(bp + "/fc2_w", cfg.mlp, d);
    init_fan_in(b.fc2_w, cfg.mlp, seed);
    b.fc2_b = make_param(bp + "/fc2_b", 1, d);
  }
  lnf_g = make_param(prefix + "/lnf_g", 1, d);
  init_ones(lnf_g);
  lnf_b = make_param(prefix + "/lnf_b", 1, d);
}

void VitParams::visit(const std::function<void(Parameter&)>& fn) {
  fn(patch_w);
  fn(patch_b);
  fn(cls);
  fn(pos);
  for (auto& b : blocks) {
    fn(b.ln1_g); fn(b.ln1_b);
    fn(b.qkv_w); fn(b.qkv_b);
    fn(b.proj_w); fn(b.proj_b);
    fn(b.ln2_g); fn(b.ln2_b);
    fn(b.fc1_w); fn(b.fc1_b);
    fn(b.fc2_w); fn(b.fc2_b);
  }
  fn(lnf_g);
  fn(lnf_b);
}

void VitParams::visit(const std::function<void(const Parameter&)>& fn) const {
  const_cast<VitParams*>(this)->visit(
      std::function<void(Parameter&)>([&fn](Parameter& p) { fn(p); }));
}

void VitParams::copy_values_from(const VitParams& src) {
  std::vector<const Parameter*> src_params;
  src.visit(std::function<void(const Parameter&)>(
      [&src_params](const Parameter& p) { src_params.push_back(&p); }));
  std::size_t i = 0;
  visit(std::function<void(Parameter&)>([&](Parameter& p) {
    require(i < src_params.size() && src_params[i]->value.rows() == p.value.rows() &&
                src_params[i]->value.cols() == p.value.cols(),
            "ShapeMismatch", "encoder parameter sets are not shape-identical");
    p.value = src_params[i]->value;
    ++i;
  }));
}

long VitParams::parameter_count() const {
  long n = 0;
  visit(std::function<void(const Parameter&)>([&n](const Parameter& p) { n += p.size(); }));
  return n;
}

namespace {

struct ParamLookup {
  Tape& tape;
  bool trainable;
  Var operator()(Parameter& p) const { return trainable ? tape.leaf(p) : tape.frozen(p); }
};

Var forward_impl(Tape& tape, const Eigen::MatrixXd& patches, const std::vector<int>& grid_indices,
                 VitParams& params, bool trainable) {
  params.cfg.validate();
  const int t_patches = static_cast<int>(patches.rows());
  require(t_patches >= 1, "ShapeMismatch", "view with no kept patches");
  require(patches.cols() == params.patch_dim, "ShapeMismatch",
          "patch vectors do not match the embedding width");
  require(grid_indices.size() == static_cast<std::size_t>(t_patches), "ShapeMismatch",
          "one grid index required per patch");
  require(t_patches + 1 <= params.max_tokens, "ShapeMismatch",
          "view has more patches than the positional table");

  ParamLookup P{tape, trainable};
  const int d = params.cfg.hidden;
  const int heads = params.cfg.heads;
  const int dh = d / heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Embed patches, prepend the class token, add positional rows selected by
  // grid index (masked positions are simply absent).
  Var x = tape.add_rowvec(tape.matmul(tape.constant(patches), P(params.patch_w)),
                          P(params.patch_b));
  x = tape.concat_rows({P(params.cls), x});

  std::vector<int> pos_rows(static_cast<std::size_t>(t_patches) + 1);
  pos_rows[0] = 0;
  for (int i = 0; i < t_patches; ++i) {
    const int g = grid_indices[static_cast<std::size_t>(i)];
    require(g >= 0 && g + 1 < params.max_tokens, "ShapeMismatch", "grid index outside table");
    pos_rows[static_cast<std::size_t>(i) + 1] = g + 1;
  }
  x = tape.add(x, tape.select_rows(P(params.pos), pos_rows));

  for (auto& blk : params.blocks) {
    // Attention with pre-norm.
    Var h = tape.layer_norm_rows(x, P(blk.ln1_g), P(blk.ln1_b));
    Var qkv = tape.add_rowvec(tape.matmul(h, P(blk.qkv_w)), P(blk.qkv_b));
    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads));
    for (int hd = 0; hd < heads; ++hd) {
      Var q = tape.slice_cols(qkv, hd * dh, dh);
      Var k = tape.slice_cols(qkv, d + hd * dh, dh);
      Var v = tape.slice_cols(qkv, 2 * d + hd * dh, dh);
      Var scores = tape.scale(tape.matmul(q, tape.transpose(k)), attn_scale);
      Var attn = tape.softmax_rows(scores);
      head_outs.push_back(tape.matmul(attn, v));
    }
    Var merged = tape.concat_cols(head_outs);
    Var attn_out = tape.add_rowvec(tape.matmul(merged, P(blk.proj_w)), P(blk.proj_b));
    x = tape.add(x, attn_out);

    // MLP with pre-norm.
    Var m = tape.layer_norm_rows(x, P(blk.ln2_g), P(blk.ln2_b));
    m = tape.gelu(tape.add_rowvec(tape.matmul(m, P(blk.fc1_w)), P(blk.fc1_b)));
    m = tape.add_rowvec(tape.matmul(m, P(blk.fc2_w)), P(blk.fc2_b));
    x = tape.add(x, m);
  }

  x = tape.layer_norm_rows(x, P(params.lnf_g), P(params.lnf_b));
  return tape.row(x, 0);
}

}  // namespace

Var vit_forward(Tape& tape, const Eigen::MatrixXd& patches, const std::vector<int>& grid_indices,
                VitParams& params, bool trainable) {
  return forward_impl(tape, patches, grid_indices, params, trainable);
}

Var vit_forward_frozen(Tape& tape, const Eigen::MatrixXd& patches,
                       const std::vector<int>& grid_indices, const VitParams& params) {
  return forward_impl(tape, patches, grid_indices, const_cast<VitParams&>(params), false);
}

}  // namespace mmsn::nn
