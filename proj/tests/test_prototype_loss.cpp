#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmsn/common.hpp"
#include "mmsn/prototype_loss.hpp"
#include "test_util.hpp"

using namespace mmsn;
using nn::Tape;
using nn::Var;

namespace {

// Independent scalar re-implementation of the objective, written with raw
// loops only: no Eigen reductions, no shared helpers.
struct ScalarOracle {
  static std::vector<double> softmax_cosine(const std::vector<double>& z,
                                            const std::vector<std::vector<double>>& protos,
                                            double temp) {
    double zn = 0.0;
    for (double v : z) zn += v * v;
    zn = std::sqrt(zn);
    std::vector<double> logits(protos.size());
    for (std::size_t k = 0; k < protos.size(); ++k) {
      double qn = 0.0, dot = 0.0;
      for (std::size_t j = 0; j < z.size(); ++j) {
        qn += protos[k][j] * protos[k][j];
        dot += protos[k][j] * z[j];
      }
      logits[k] = dot / (std::sqrt(qn) * zn * temp);
    }
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    std::vector<double> p(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) {
      p[k] = std::exp(logits[k] - mx);
      sum += p[k];
    }
    for (double& v : p) v /= sum;
    return p;
  }

  static double run(const std::vector<std::vector<double>>& z_anchor,
                    const std::vector<std::vector<double>>& z_target,
                    const std::vector<std::vector<double>>& protos, double tau, double tau_plus,
                    double lambda, double* ce_out = nullptr, double* ent_out = nullptr) {
    const std::size_t b = z_target.size();
    const std::size_t m = z_anchor.size() / b;
    const std::size_t k = protos.size();

    std::vector<double> p_bar(k, 0.0);
    double ce = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      const std::vector<double> pt = softmax_cosine(z_target[i], protos, tau_plus);
      for (std::size_t v = 0; v < m; ++v) {
        const std::vector<double> pa = softmax_cosine(z_anchor[i * m + v], protos, tau);
        for (std::size_t j = 0; j < k; ++j) {
          ce -= pt[j] * std::log(std::max(pa[j], 1e-12));
          p_bar[j] += pa[j];
        }
      }
    }
    const double denom = static_cast<double>(b * m);
    ce /= denom;
    double ent = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p_bar[j] /= denom;
      ent -= p_bar[j] * std::log(std::max(p_bar[j], 1e-12));
    }
    if (ce_out) *ce_out = ce;
    if (ent_out) *ent_out = ent;
    return ce - lambda * ent;
  }
};

}  // namespace

TEST_CASE("assignment concentrates on the matching prototype at low temperature") {
  Eigen::MatrixXd protos = Eigen::MatrixXd::Identity(4, 4);  // orthogonal rows
  const Eigen::VectorXd z = protos.row(2).transpose();
  const Eigen::VectorXd p = assign(z, protos, 0.01);
  CHECK(p(2) > 0.99);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("identical prototypes give the uniform assignment") {
  Eigen::MatrixXd protos(5, 3);
  for (int r = 0; r < 5; ++r) protos.row(r) << 1.0, 2.0, -0.5;
  Prng rng(1);
  const Eigen::VectorXd z = testutil::random_matrix(3, 1, rng);
  const Eigen::VectorXd p = assign(z, protos, 0.1);
  for (int k = 0; k < 5; ++k) CHECK(p(k) == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("assignments are normalized and scale-invariant in z") {
  Prng rng(2);
  const Eigen::MatrixXd protos = testutil::random_matrix(8, 6, rng);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd z = testutil::random_matrix(6, 1, rng);
    const Eigen::VectorXd p = assign(z, protos, 0.1);
    CHECK(std::abs(p.sum() - 1.0) < 1e-6);
    for (int k = 0; k < p.size(); ++k) {
      CHECK(p(k) > 0.0);
      CHECK(p(k) < 1.0);
    }
    const double alpha = rng.uniform(0.1, 10.0);
    const Eigen::VectorXd p2 = assign((alpha * z).eval(), protos, 0.1);
    CHECK((p - p2).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("assignment error codes") {
  Prng rng(3);
  const Eigen::MatrixXd protos = testutil::random_matrix(4, 3, rng);
  CHECK_THROWS_WITH_AS(assign(Eigen::VectorXd::Zero(3), protos, 0.1),
                       doctest::Contains("ZeroVector"), Error);
  CHECK_THROWS_WITH_AS(assign(Eigen::VectorXd::Ones(3), protos, 0.0),
                       doctest::Contains("NonPositiveTemperature"), Error);
}

TEST_CASE("cross entropy closed forms") {
  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(4, 0.25);
  CHECK(cross_entropy(uniform, uniform) == doctest::Approx(std::log(4.0)).epsilon(1e-9));

  Eigen::VectorXd onehot = Eigen::VectorXd::Zero(4);
  onehot(1) = 1.0;
  Eigen::VectorXd p(4);
  p << 0.2, 0.5, 0.2, 0.1;
  CHECK(cross_entropy(onehot, p) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("Gibbs inequality over random distribution pairs") {
  Prng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = rng.uniform_int(2, 8);
    Eigen::VectorXd a(k), b(k);
    for (int i = 0; i < k; ++i) {
      a(i) = rng.uniform(1e-3, 1.0);
      b(i) = rng.uniform(1e-3, 1.0);
    }
    a /= a.sum();
    b /= b.sum();
    CHECK(cross_entropy(a, b) >= cross_entropy(a, a) - 1e-12);
  }
}

TEST_CASE("mean anchor distribution") {
  Eigen::MatrixXd one(1, 3);
  one << 0.2, 0.3, 0.5;
  CHECK((mean_anchor_distribution(one) - one.transpose()).cwiseAbs().maxCoeff() < 1e-15);

  Eigen::MatrixXd two(2, 2);
  two << 1.0, 0.0, 0.0, 1.0;
  const Eigen::VectorXd avg = mean_anchor_distribution(two);
  CHECK(avg(0) == doctest::Approx(0.5));
  CHECK(avg(1) == doctest::Approx(0.5));

  CHECK_THROWS_WITH_AS(mean_anchor_distribution(Eigen::MatrixXd(0, 3)),
                       doctest::Contains("EmptyBatch"), Error);
}

TEST_CASE("entropy is maximal exactly at the uniform distribution") {
  const int k = 16;
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(k, 1.0 / k);
  CHECK(std::abs(entropy(u) - std::log(static_cast<double>(k))) < 1e-9);

  Prng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd p(k);
    for (int i = 0; i < k; ++i) p(i) = rng.uniform(1e-4, 1.0);
    p /= p.sum();
    CHECK(entropy(p) <= std::log(static_cast<double>(k)) + 1e-12);
  }
}

TEST_CASE("single-view collapse and disabled regularizer") {
  Prng rng(6);
  const Eigen::MatrixXd protos = testutil::random_matrix(4, 5, rng);
  const Eigen::MatrixXd z = testutil::random_matrix(1, 5, rng);

  // tau == tau_plus and identical embeddings force p_target == p_anchor.
  const Temperatures same{0.1, 0.1};
  const LossBreakdown lb = total_loss(z, z, protos, same, 0.7);
  const Eigen::VectorXd p = assign(z.row(0).transpose(), protos, 0.1);
  const double h = entropy(p);
  CHECK(lb.ce_term == doctest::Approx(cross_entropy(p, p)).epsilon(1e-12));
  CHECK(lb.total == doctest::Approx(cross_entropy(p, p) - 0.7 * h).epsilon(1e-12));

  const LossBreakdown off = total_loss(z, z, protos, same, 0.0);
  CHECK(off.total == doctest::Approx(off.ce_term).epsilon(1e-15));
}

TEST_CASE("total loss matches the independent scalar oracle") {
  Prng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int b = 2, m = 3, k = 4, dim = 6;
    const Eigen::MatrixXd za = testutil::random_matrix(b * m, dim, rng);
    const Eigen::MatrixXd zt = testutil::random_matrix(b, dim, rng);
    const Eigen::MatrixXd protos = testutil::random_matrix(k, dim, rng);
    const double lambda = rng.uniform(0.0, 2.0);
    const Temperatures temps{0.1, 0.025};

    auto rows_of = [dim](const Eigen::MatrixXd& mat) {
      std::vector<std::vector<double>> out;
      for (long r = 0; r < mat.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(dim));
        for (int c = 0; c < dim; ++c) row[static_cast<std::size_t>(c)] = mat(r, c);
        out.push_back(std::move(row));
      }
      return out;
    };
    const auto za_v = rows_of(za);
    const auto zt_v = rows_of(zt);
    const auto q_v = rows_of(protos);

    const LossBreakdown lb = total_loss(za, zt, protos, temps, lambda);
    double ce = 0.0, ent = 0.0;
    const double total = ScalarOracle::run(za_v, zt_v, q_v, temps.tau, temps.tau_plus, lambda,
                                           &ce, &ent);
    CHECK(std::abs(lb.total - total) < 1e-10);
    CHECK(std::abs(lb.ce_term - ce) < 1e-10);
    CHECK(std::abs(lb.entropy_term - ent) < 1e-10);
    CHECK(std::abs(lb.p_bar.sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("tape total loss agrees with the reference evaluation") {
  Prng rng(8);
  const int b = 2, m = 3, k = 5, dim = 7;
  const Eigen::MatrixXd za = testutil::random_matrix(b * m, dim, rng);
  const Eigen::MatrixXd zt = testutil::random_matrix(b, dim, rng);
  nn::Parameter protos("q", testutil::random_matrix(k, dim, rng));
  const Temperatures temps{0.1, 0.025};
  const double lambda = 1.0;

  const LossBreakdown ref = total_loss(za, zt, protos.value, temps, lambda);

  Eigen::MatrixXd p_target(b, k);
  for (int i = 0; i < b; ++i) {
    p_target.row(i) = assign(zt.row(i).transpose(), protos.value, temps.tau_plus).transpose();
  }
  Tape tape;
  const nn::LossGraph g = nn::total_loss_graph(tape, tape.constant(za), p_target, b, m,
                                               tape.leaf(protos), temps, lambda);
  CHECK(g.total.scalar() == doctest::Approx(ref.total).epsilon(1e-12));
  CHECK(g.ce.scalar() == doctest::Approx(ref.ce_term).epsilon(1e-12));
  CHECK(g.entropy.scalar() == doctest::Approx(ref.entropy_term).epsilon(1e-12));
}

TEST_CASE("loss gradients w.r.t. embeddings and prototypes match finite differences") {
  Prng rng(9);
  const int b = 2, m = 3, k = 4, dim = 8;
  nn::Parameter za("za", testutil::random_matrix(b * m, dim, rng));
  nn::Parameter protos("q", testutil::random_matrix(k, dim, rng));
  const Eigen::MatrixXd zt = testutil::random_matrix(b, dim, rng);
  const Temperatures temps{0.1, 0.025};
  const double lambda = 1.0;

  Eigen::MatrixXd p_target(b, k);
  for (int i = 0; i < b; ++i) {
    p_target.row(i) = assign(zt.row(i).transpose(), protos.value, temps.tau_plus).transpose();
  }

  auto loss_value = [&]() {
    Tape t;
    return nn::total_loss_graph(t, t.constant(za.value), p_target, b, m,
                                t.constant(protos.value), temps, lambda)
        .total.scalar();
  };

  Tape tape;
  const nn::LossGraph g = nn::total_loss_graph(tape, tape.leaf(za), p_target, b, m,
                                               tape.leaf(protos), temps, lambda);
  za.zero_grad();
  protos.zero_grad();
  tape.backward(g.total);

  for (nn::Parameter* p : {&za, &protos}) {
    const double eps = 1e-5;
    double worst = 0.0;
    for (long c = 0; c < p->value.cols(); ++c) {
      for (long r = 0; r < p->value.rows(); ++r) {
        const double keep = p->value(r, c);
        p->value(r, c) = keep + eps;
        const double up = loss_value();
        p->value(r, c) = keep - eps;
        const double down = loss_value();
        p->value(r, c) = keep;
        const double fd = (up - down) / (2 * eps);
        const double an = p->grad(r, c);
        worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}));
      }
    }
    CAPTURE(p->name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("lower anchor temperature sharpens assignments") {
  Prng rng(10);
  const Eigen::MatrixXd protos = testutil::random_matrix(8, 6, rng);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXd z = testutil::random_matrix(6, 1, rng);
    const double hot = assign(z, protos, 0.5).maxCoeff();
    const double cold = assign(z, protos, 0.05).maxCoeff();
    CHECK(cold >= hot - 1e-12);
  }
}
