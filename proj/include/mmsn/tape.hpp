#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace mmsn::nn {

/// Named tensor with an accumulated gradient.
struct Parameter {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Eigen::MatrixXd v)
      : name(std::move(n)), value(std::move(v)),
        grad(Eigen::MatrixXd::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  long size() const { return value.size(); }
};

class Tape;

/// Handle to a tape node. Cheap to copy; valid until Tape::clear().
class Var {
 public:
  Var() = default;
  const Eigen::MatrixXd& val() const;
  long rows() const { return val().rows(); }
  long cols() const { return val().cols(); }
  double scalar() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int i) : tape_(t), idx_(i) {}
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

/// Dynamic reverse-mode tape over dense matrices. Operations record a
/// backward closure; nodes reachable only from constants skip gradient work
/// entirely, so frozen branches cost nothing and receive nothing.
class Tape {
 public:
  Var constant(Eigen::MatrixXd v);
  /// Differentiable leaf; backward() accumulates into p.grad.
  Var leaf(Parameter& p);
  /// Constant view of a parameter (no gradient ever flows).
  Var frozen(const Parameter& p);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double s);
  /// Adds a 1 x n bias row to every row of a.
  Var add_rowvec(Var a, Var bias);
  Var transpose(Var a);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_cols(Var a, int start, int n);
  Var select_rows(Var a, std::vector<int> rows);
  Var row(Var a, int r);
  Var softmax_rows(Var a);
  /// Row-wise layer norm with per-column gain/bias (1 x n each).
  Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-6);
  Var gelu(Var a);
  /// log(1 + exp(x)), numerically stable; gradient is sigmoid(x).
  Var softplus(Var a);
  Var l2_normalize_rows(Var a);
  /// log(max(x, floor)); zero gradient where the floor clips.
  Var log_clamped(Var a, double floor = 1e-12);
  Var sum_all(Var a);
  /// 1 x n column means.
  Var colwise_mean(Var a);

  /// Reverse sweep from a 1x1 node; accumulates into bound Parameter grads.
  void backward(Var loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;  // allocated during backward
    bool needs_grad = false;
    Parameter* bound = nullptr;
    std::function<void(Tape&, Node&)> back;
  };

  Var push(Node n);
  Node& at(int i) { return nodes_[static_cast<std::size_t>(i)]; }
  const Eigen::MatrixXd& value(int i) const { return nodes_[static_cast<std::size_t>(i)].value; }
  bool needs(int i) const { return nodes_[static_cast<std::size_t>(i)].needs_grad; }
  /// Gradient buffer of node i, zero-allocated on first touch.
  Eigen::MatrixXd& grad(int i);

  std::vector<Node> nodes_;
};

}  // namespace mmsn::nn
