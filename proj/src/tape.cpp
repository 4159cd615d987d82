#include "mmsn/tape.hpp"

#include <cmath>
#include <memory>

#include "mmsn/common.hpp"

namespace mmsn::nn {

const Eigen::MatrixXd& Var::val() const {
  require(tape_ != nullptr, "InvalidArgument", "use of an empty Var");
  return tape_->value(idx_);
}

double Var::scalar() const {
  const auto& v = val();
  require(v.rows() == 1 && v.cols() == 1, "ShapeMismatch", "scalar() on a non-1x1 node");
  return v(0, 0);
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Eigen::MatrixXd& Tape::grad(int i) {
  Node& n = at(i);
  if (n.grad.size() == 0) n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::constant(Eigen::MatrixXd v) {
  Node n;
  n.value = std::move(v);
  return push(std::move(n));
}

Var Tape::leaf(Parameter& p) {
  Node n;
  n.value = p.value;
  n.needs_grad = true;
  n.bound = &p;
  n.back = [](Tape&, Node& self) { self.bound->grad += self.grad; };
  return push(std::move(n));
}

Var Tape::frozen(const Parameter& p) { return constant(p.value); }

Var Tape::matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "ShapeMismatch", "matmul inner dimensions differ");
  const int ia = a.idx_, ib = b.idx_;
  Node n;
  n.value = value(ia) * value(ib);
  n.needs_grad = needs(ia) || needs(ib);
  if (n.needs_grad) {
    n.back = [ia, ib](Tape& t, Node& self) {
      if (t.needs(ia)) t.grad(ia).noalias() += self.grad * t.value(ib).transpose();
      if (t.needs(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * self.grad;
    };
  }
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "ShapeMismatch", "add shapes differ");
  const int ia = a.idx_, ib = b.idx_;
  Node n;
  n.value = value(ia) + value(ib);
  n.needs_grad = needs(ia) || needs(ib);
  if (n.needs_grad) {
    n.back = [ia, ib](Tape& t, Node& self) {
      if (t.needs(ia)) t.grad(ia) += self.grad;
      if (t.needs(ib)) t.grad(ib) += self.grad;
    };
  }
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "ShapeMismatch", "sub shapes differ");
  const int ia = a.idx_, ib = b.idx_;
  Node n;
  n.value = value(ia) - value(ib);
  n.needs_grad = needs(ia) || needs(ib);
  if (n.needs_grad) {
    n.back = [ia, ib](Tape& t, Node& self) {
      if (t.needs(ia)) t.grad(ia) += self.grad;
      if (t.needs(ib)) t.grad(ib) -= self.grad;
    };
  }
  return push(std::move(n));
}

Var Tape::hadamard(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "ShapeMismatch", "hadamard shapes differ");
  const int ia = a.idx_, ib = b.idx_;
  Node n;
  n.value = value(ia).cwiseProduct(value(ib));
  n.needs_grad = needs(ia) || needs(ib);
  if (n.needs_grad) {
    n.back = [ia, ib](Tape& t, Node& self) {
      if (t.needs(ia)) t.grad(ia) += self.grad.cwiseProduct(t.value(ib));
      if (t.needs(ib)) t.grad(ib) += self.grad.cwiseProduct(t.value(ia));
    };
  }
  return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
  const int ia = a.idx_;
  Node n;
  n.value = value(ia) * s;
  n.needs_grad = needs(ia);
  if (n.needs_grad) {
    n.back = [ia, s](Tape& t, Node& self) { t.grad(ia) += self.grad * s; };
  }
  return push(std::move(n));
}

Var Tape::add_rowvec(Var a, Var bias) {
  require(bias.rows() == 1 && bias.cols() == a.cols(), "ShapeMismatch",
          "bias must be 1 x cols(a)");
  const int ia = a.idx_, ib = bias.idx_;
  Node n;
  n.value = value(ia).rowwise() + value(ib).row(0);
  n.needs_grad = needs(ia) || needs(ib);
  if (n.needs_grad) {
    n.back = [ia, ib](Tape& t, Node& self) {
      if (t.needs(ia)) t.grad(ia) += self.grad;
      if (t.needs(ib)) t.grad(ib) += self.grad.colwise().sum();
    };
  }
  return push(std::move(n));
}

Var Tape::transpose(Var a) {
  const int ia = a.idx_;
  Node n;
  n.value = value(ia).transpose();
  n.needs_grad = needs(ia);
  if (n.needs_grad) {
    n.back = [ia](Tape& t, Node& self) { t.grad(ia) += self.grad.transpose(); };
  }
  return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "InvalidArgument", "concat_cols of nothing");
  const long rows = parts.front().rows();
  long cols = 0;
  bool any = false;
  std::vector<int> idx;
  idx.reserve(parts.size());
  for (const Var& p : parts) {
    require(p.rows() == rows, "ShapeMismatch", "concat_cols row counts differ");
    cols += p.cols();
    any = any || needs(p.idx_);
    idx.push_back(p.idx_);
  }
  Node n;
  n.value.resize(rows, cols);
  long off = 0;
  for (const Var& p : parts) {
    n.value.middleCols(off, p.cols()) = p.val();
    off += p.cols();
  }
  n.needs_grad = any;
  if (any) {
    n.back = [idx](Tape& t, Node& self) {
      long off2 = 0;
      for (int i : idx) {
        const long c = t.value(i).cols();
        if (t.needs(i)) t.grad(i) += self.grad.middleCols(off2, c);
        off2 += c;
      }
    };
  }
  return push(std::move(n));
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "InvalidArgument", "concat_rows of nothing");
  const long cols = parts.front().cols();
  long rows = 0;
  bool any = false;
  std::vector<int> idx;
  idx.reserve(parts.size());
  for (const Var& p : parts) {
    require(p.cols() == cols, "ShapeMismatch", "concat_rows column counts differ");
    rows += p.rows();
    any = any || needs(p.idx_);
    idx.push_back(p.idx_);
  }
  Node n;
  n.value.resize(rows, cols);
  long off = 0;
  for (const Var& p : parts) {
    n.value.middleRows(off, p.rows()) = p.val();
    off += p.rows();
  }
  n.needs_grad = any;
  if (any) {
    n.back = [idx](Tape& t, Node& self) {
      long off2 = 0;
      for (int i : idx) {
        const long r = t.value(i).rows();
        if (t.needs(i)) t.grad(i) += self.grad.middleRows(off2, r);
        off2 += r;
      }
    };
  }
  return push(std::move(n));
}

Var Tape::slice_cols(Var a, int start, int ncols) {
  require(start >= 0 && ncols >= 1 && start + ncols <= a.cols(), "ShapeMismatch",
          "slice_cols out of range");
  const int ia = a.idx_;
  Node n;
  n.value = value(ia).middleCols(start, ncols);
  n.needs_grad = needs(ia);
  if (n.needs_grad) {
    n.back = [ia, start, ncols](Tape& t, Node& self) {
      t.grad(ia).middleCols(start, ncols) += self.grad;
    };
  }
  return push(std::move(n));
}

Var Tape::select_rows(Var a, std::vector<int> rows) {
  const int ia = a.idx_;
  Node n;
  n.value.resize(static_cast<long>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < a.rows(), "ShapeMismatch", "select_rows index out of range");
    n.value.row(static_cast<long>(i)) = value(ia).row(rows[i]);
  }
  n.needs_grad = needs(ia);
  if (n.needs_grad) {
    n.back = [ia, rows = std::move(rows)](Tape& t, Node& self) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        t.grad(ia).row(rows[i]) += self.grad.row(static_cast<long>(i));
      }
    };
  }
  return push(std::move(n));
}

Var Tape::row(Var a, int r) { return select_rows(a, {r}); }

Var Tape::softmax_rows(Var a) {
  const int ia = a.idx_;
  Node n;
  n.value.resizeLike(value(ia));
  for (long r = 0; r < value(ia).rows(); ++r) {
    const auto x = value(ia).row(r);
    const double m = x.maxCoeff();
    const Eigen::RowVectorXd e = (x.array() - m).exp().matrix();
    n.value.row(r) = e / e.sum();
  }
  n.needs_grad = needs(ia);
  if (n.needs_grad) {
    n.back = [ia](Tape& t, Node& self) {
      Eigen::MatrixXd& ga = t.grad(ia);
      for (long r = 0; r < self.value.rows(); ++r) {
        const auto p = self.value.row(r);
        const auto dy = self.grad.row(r);
        const double dot = dy.cwiseProduct(p).sum();
        ga.row(r) += p.cwiseProduct((dy.array() - dot).matrix());
      }
    };
  }
  return push(std::move(n));
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  require(gain.rows() == 1 && gain.cols() == x.cols(), "ShapeMismatch", "layer norm gain shape");
  require(bias.rows() == 1 && bias.cols() == x.cols(), "ShapeMismatch", "layer norm bias shape");
  const int ix = x.idx_, ig = gain.idx_, ib = bias.idx_;
  const long cols = x.cols();

  // Cache normalized rows and inverse stddevs for the backward pass.
  auto xhat = std::make_shared<Eigen::MatrixXd>(x.rows(), cols);
  auto inv_std = std::make_shared<Eigen::VectorXd>(x.rows());
  Node n;
  n.value.resizeLike(value(ix));
  for (long r = 0; r < value(ix).rows(); ++r) {
    const auto xr = value(ix).row(r);
    const double mu = xr.mean();
    const double var = (xr.array() - mu).square().sum() / static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    xhat->row(r) = (xr.array() - mu) * is;
    n.value.row(r) = xhat->row(r).cwiseProduct(value(ig).row(0)) + value(ib).row(0);
  }
  n.needs_grad = needs(ix) || needs(ig) || needs(ib);
  if (n.needs_grad) {
    n.back = [ix, ig, ib, xhat, inv_std, cols](Tape& t, Node& self) {
      if (t.needs(ig)) {
        t.grad(ig).row(0) += self.grad.cwiseProduct(*xhat).colwise().sum();
      }
      if (t.needs(ib)) {
        t.grad(ib).row(0) += self.grad.colwise().sum();
      }
      if (t.needs(ix)) {
        Eigen::MatrixXd& gx = t.grad(ix);
        const auto& g = t.value(ig).row(0);
        for (long r = 0; r < self.grad.rows(); ++r) {
          const Eigen::RowVectorXd dxhat = self.grad.row(r).cwiseProduct(g);
          const auto xh = xhat->row(r);
          const double m1 = dxhat.mean();
          const double m2 = dxhat.cwiseProduct(xh).mean();
          gx.row(r) +=
              ((dxhat.array() - m1 - xh.array() * m2) * (*inv_std)(r)).matrix();
        }
      }
    };
  }
  return push(std::move(n));
}

Var Tape::gelu(Var a) {
  const int ia = a.idx_;
  static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
  Node n;
  n.value = value(ia).unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  n.needs_grad = needs(ia);
  if (n.needs_grad) {
    n.back = [ia](Tape& t, Node& self) {
      const Eigen::MatrixXd d = t.value(ia).unaryExpr([](double x) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
      t.grad(ia) += self.grad.cwiseProduct(d);
    };
  }
  return push(std::move(n));
}

Var Tape::softplus(Var a) {
  const int ia = a.idx_;
  Node n;
  n.value = value(ia).unaryExpr([](double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  n.needs_grad = needs(ia);
  if (n.needs_grad) {
    n.back = [ia](Tape& t, Node& self) {
      const Eigen::MatrixXd d =
          t.value(ia).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
      t.grad(ia) += self.grad.cwiseProduct(d);
    };
  }
  return push(std::move(n));
}

Var Tape::l2_normalize_rows(Var a) {
  const int ia = a.idx_;
  auto norms = std::make_shared<Eigen::VectorXd>(a.rows());
  Node n;
  n.value.resizeLike(value(ia));
  for (long r = 0; r < value(ia).rows(); ++r) {
    const double nm = value(ia).row(r).norm();
    // Zero rows are a caller error; non-finite rows propagate as NaN so the
    // step-level finiteness check can report them.
    require(!(nm <= 1e-30), "ZeroVector", "cannot L2-normalize a zero row");
    (*norms)(r) = nm;
    n.value.row(r) = value(ia).row(r) / nm;
  }
  n.needs_grad = needs(ia);
  if (n.needs_grad) {
    n.back = [ia, norms](Tape& t, Node& self) {
      Eigen::MatrixXd& ga = t.grad(ia);
      for (long r = 0; r < self.value.rows(); ++r) {
        const auto y = self.value.row(r);
        const auto dy = self.grad.row(r);
        const double dot = y.cwiseProduct(dy).sum();
        ga.row(r) += (dy - dot * y) / (*norms)(r);
      }
    };
  }
  return push(std::move(n));
}

Var Tape::log_clamped(Var a, double floor) {
  const int ia = a.idx_;
  Node n;
  n.value = value(ia).unaryExpr([floor](double x) { return std::log(std::max(x, floor)); });
  n.needs_grad = needs(ia);
  if (n.needs_grad) {
    n.back = [ia, floor](Tape& t, Node& self) {
      const Eigen::MatrixXd d =
          t.value(ia).unaryExpr([floor](double x) { return x > floor ? 1.0 / x : 0.0; });
      t.grad(ia) += self.grad.cwiseProduct(d);
    };
  }
  return push(std::move(n));
}

Var Tape::sum_all(Var a) {
  const int ia = a.idx_;
  Node n;
  n.value = Eigen::MatrixXd::Constant(1, 1, value(ia).sum());
  n.needs_grad = needs(ia);
  if (n.needs_grad) {
    n.back = [ia](Tape& t, Node& self) {
      t.grad(ia).array() += self.grad(0, 0);
    };
  }
  return push(std::move(n));
}

Var Tape::colwise_mean(Var a) {
  const int ia = a.idx_;
  const double inv = 1.0 / static_cast<double>(a.rows());
  Node n;
  n.value = value(ia).colwise().mean();
  n.needs_grad = needs(ia);
  if (n.needs_grad) {
    const long rows = a.rows();
    n.back = [ia, inv, rows](Tape& t, Node& self) {
      t.grad(ia).noalias() += Eigen::VectorXd::Ones(rows) * (self.grad.row(0) * inv);
    };
  }
  return push(std::move(n));
}

void Tape::backward(Var loss) {
  require(loss.tape_ == this, "InvalidArgument", "loss from a different tape");
  Node& top = at(loss.idx_);
  require(top.value.rows() == 1 && top.value.cols() == 1, "ShapeMismatch",
          "backward() requires a scalar loss");
  if (!top.needs_grad) return;
  grad(loss.idx_).setOnes();
  for (int i = loss.idx_; i >= 0; --i) {
    Node& node = at(i);
    if (node.needs_grad && node.grad.size() != 0 && node.back) node.back(*this, node);
  }
}

void Tape::clear() { nodes_.clear(); }

}  // namespace mmsn::nn
