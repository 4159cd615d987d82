#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "mmsn/tape.hpp"

namespace mmsn::nn {

/// AdamW: Adam moments plus decoupled weight decay. Moments exist only for
/// registered (trainable) parameters.
class AdamW {
 public:
  struct Hyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW() = default;
  explicit AdamW(Hyper h) : hyper_(h) {}

  void register_param(Parameter& p);
  void step(double lr);
  void zero_grad();

  long step_count() const { return t_; }
  std::size_t size() const { return slots_.size(); }

  struct Slot {
    Parameter* param = nullptr;
    Eigen::MatrixXd m, v;
  };
  std::vector<Slot>& slots() { return slots_; }
  const Hyper& hyper() const { return hyper_; }
  void set_step_count(long t) { t_ = t; }

 private:
  Hyper hyper_;
  std::vector<Slot> slots_;
  long t_ = 0;
};

/// Global-norm gradient clipping; a no-op when max_norm <= 0.
void clip_grad_norm(std::vector<Parameter*>& params, double max_norm);

/// lr(epoch) = lr0 * 0.5 * (1 + cos(pi * epoch / max_epochs)), floored at 0.
inline double cosine_lr(double lr0, int epoch, int max_epochs) {
  if (epoch >= max_epochs) return 0.0;
  return lr0 * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) / max_epochs));
}

}  // namespace mmsn::nn
