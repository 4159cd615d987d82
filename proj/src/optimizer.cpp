#include "mmsn/optimizer.hpp"

#include "mmsn/common.hpp"

namespace mmsn::nn {

void AdamW::register_param(Parameter& p) {
  Slot s;
  s.param = &p;
  s.m = Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols());
  s.v = Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols());
  slots_.push_back(std::move(s));
}

void AdamW::step(double lr) {
  ++t_;
  const double b1 = hyper_.beta1, b2 = hyper_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (Slot& s : slots_) {
    Parameter& p = *s.param;
    s.m = b1 * s.m + (1.0 - b1) * p.grad;
    s.v = b2 * s.v + (1.0 - b2) * p.grad.cwiseProduct(p.grad);
    const Eigen::MatrixXd m_hat = s.m / bc1;
    const Eigen::MatrixXd v_hat = s.v / bc2;
    p.value -=
        lr * (m_hat.array() / (v_hat.array().sqrt() + hyper_.eps)).matrix();
    if (hyper_.weight_decay != 0.0) p.value -= lr * hyper_.weight_decay * p.value;
  }
}

void AdamW::zero_grad() {
  for (Slot& s : slots_) s.param->zero_grad();
}

void clip_grad_norm(std::vector<Parameter*>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (Parameter* p : params) p->grad *= scale;
}

}  // namespace mmsn::nn
