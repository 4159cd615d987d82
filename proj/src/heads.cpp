#include "mmsn/heads.hpp"

#include "mmsn/common.hpp"
#include "mmsn/vit.hpp"

namespace mmsn::nn {

LinearParams::LinearParams(int in, int out, const std::string& prefix, std::uint64_t seed) {
  require(in >= 1 && out >= 1, "InvalidArgument", "linear layer dims must be positive");
  w = Parameter(prefix + "/w", Eigen::MatrixXd::Zero(in, out));
  init_fan_in(w, in, seed);
  b = Parameter(prefix + "/b", Eigen::MatrixXd::Zero(1, out));
}

Var linear(Tape& tape, Var x, LinearParams& p, bool trainable) {
  require(x.cols() == p.w.value.rows(), "ShapeMismatch",
          "linear input width " + std::to_string(x.cols()) + " != " +
              std::to_string(p.w.value.rows()));
  Var w = trainable ? tape.leaf(p.w) : tape.frozen(p.w);
  Var b = trainable ? tape.leaf(p.b) : tape.frozen(p.b);
  return tape.add_rowvec(tape.matmul(x, w), b);
}

MlpHeadParams::MlpHeadParams(int in, int hidden, int out, const std::string& prefix,
                             std::uint64_t seed)
    : l1(in, hidden, prefix + "/l1", seed),
      l2(hidden, hidden, prefix + "/l2", seed),
      l3(hidden, out, prefix + "/l3", seed) {
  ln1_g = Parameter(prefix + "/ln1_g", Eigen::MatrixXd::Ones(1, hidden));
  ln1_b = Parameter(prefix + "/ln1_b", Eigen::MatrixXd::Zero(1, hidden));
  ln2_g = Parameter(prefix + "/ln2_g", Eigen::MatrixXd::Ones(1, hidden));
  ln2_b = Parameter(prefix + "/ln2_b", Eigen::MatrixXd::Zero(1, hidden));
}

void MlpHeadParams::visit(const std::function<void(Parameter&)>& fn) {
  l1.visit(fn);
  fn(ln1_g);
  fn(ln1_b);
  l2.visit(fn);
  fn(ln2_g);
  fn(ln2_b);
  l3.visit(fn);
}

void MlpHeadParams::copy_values_from(const MlpHeadParams& src) {
  std::vector<const Parameter*> sp;
  const_cast<MlpHeadParams&>(src).visit([&sp](Parameter& p) { sp.push_back(&p); });
  std::size_t i = 0;
  visit([&](Parameter& p) {
    require(i < sp.size() && sp[i]->value.rows() == p.value.rows() &&
                sp[i]->value.cols() == p.value.cols(),
            "ShapeMismatch", "head parameter sets are not shape-identical");
    p.value = sp[i]->value;
    ++i;
  });
}

long MlpHeadParams::parameter_count() const {
  long n = 0;
  const_cast<MlpHeadParams*>(this)->visit([&n](Parameter& p) { n += p.size(); });
  return n;
}

Var mlp_head(Tape& tape, Var x, MlpHeadParams& p, bool trainable) {
  auto get = [&](Parameter& q) { return trainable ? tape.leaf(q) : tape.frozen(q); };
  Var h = linear(tape, x, p.l1, trainable);
  h = tape.gelu(tape.layer_norm_rows(h, get(p.ln1_g), get(p.ln1_b)));
  h = linear(tape, h, p.l2, trainable);
  h = tape.gelu(tape.layer_norm_rows(h, get(p.ln2_g), get(p.ln2_b)));
  return linear(tape, h, p.l3, trainable);
}

Var fuse(Tape& tape, Var v_ehr, Var v_cxr, LinearParams& g, bool trainable) {
  require(v_ehr.rows() == v_cxr.rows(), "ShapeMismatch", "fusion inputs row counts differ");
  Var cat = tape.concat_cols({v_ehr, v_cxr});
  return linear(tape, cat, g, trainable);
}

void ema_update(Parameter& target, const Parameter& anchor, double momentum) {
  require(target.value.rows() == anchor.value.rows() &&
              target.value.cols() == anchor.value.cols(),
          "ShapeMismatch", "EMA over differently shaped parameters");
  target.value = momentum * target.value + (1.0 - momentum) * anchor.value;
}

}  // namespace mmsn::nn
