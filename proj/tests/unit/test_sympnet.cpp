#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "metasym/error.hpp"
#include "metasym/sympnet/sympnet.hpp"

using namespace metasym;
using symp::FnKind;
using symp::Kind;
using symp::PhasePoint;

namespace {

PhasePoint random_point(std::mt19937_64& rng, std::size_t d, double dt) {
  std::normal_distribution<double> n;
  PhasePoint x{std::vector<double>(d), std::vector<double>(d), dt};
  for (auto& v : x.q) v = n(rng);
  for (auto& v : x.p) v = n(rng);
  return x;
}

// Stack with larger-than-default weights so that the map is far from identity.
symp::SympStack random_stack(std::mt19937_64& rng, std::size_t d, std::size_t depth) {
  std::vector<symp::LayerSpec> layers;
  const auto pattern = symp::la_pattern((depth + 3) / 4);
  layers.assign(pattern.begin(), pattern.begin() + static_cast<std::ptrdiff_t>(depth));
  symp::SympStack s = symp::make_zero_stack(d, layers);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& [name, t] : s.params.entries()) {
    ad::Tensor v = t;
    for (double& x : v.data()) x = n(rng);
    s.params.set(name, v);
  }
  return s;
}

double max_diff(const PhasePoint& a, const PhasePoint& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.q.size(); ++i) m = std::max({m, std::abs(a.q[i] - b.q[i]), std::abs(a.p[i] - b.p[i])});
  return m;
}

Eigen::MatrixXd fd_jacobian(const PhasePoint& x, const symp::SympStack& s, double h = 1e-6) {
  const std::size_t n = 2 * x.dim();
  Eigen::MatrixXd j(n, n);
  const auto base = x.flat();
  for (std::size_t c = 0; c < n; ++c) {
    auto xp = base, xm = base;
    xp[c] += h;
    xm[c] -= h;
    const auto fp = symp::stack_forward(PhasePoint::from_flat(xp, x.dt), s).flat();
    const auto fm = symp::stack_forward(PhasePoint::from_flat(xm, x.dt), s).flat();
    for (std::size_t r = 0; r < n; ++r) j(r, c) = (fp[r] - fm[r]) / (2 * h);
  }
  return j;
}

}  // namespace

TEST_SUITE("sympnet") {
  TEST_CASE("zero weights give the identity") {
    std::mt19937_64 rng(1);
    auto s = symp::make_zero_stack(3, symp::la_pattern(2));
    const auto x = random_point(rng, 3, 0.1);
    const auto y = symp::stack_forward(x, s);
    CHECK(y.q == x.q);
    // zero-scale tanh layers still leave the point untouched
    CHECK(y.p == x.p);
  }

  TEST_CASE("one-dimensional examples") {
    auto s = symp::make_zero_stack(1, {{Kind::low, FnKind::linear}});
    s.params.set(symp::param_name(0, "weight"), ad::Tensor::matrix(1, 1, {2.0}));
    const auto y = symp::shear_forward({{1.0}, {0.5}, 0.1}, s, 0);
    CHECK(y.p[0] == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(y.q[0] == 1.0);

    auto a = symp::make_zero_stack(1, {{Kind::up, FnKind::activation}});
    a.params.set(symp::param_name(0, "scale"), ad::Tensor::row({1.0}));
    const auto z = symp::shear_forward({{0.0}, {0.3}, 1.0}, a, 0);
    CHECK(z.q[0] == doctest::Approx(0.29131261245159).epsilon(1e-12));
    CHECK(z.p[0] == 0.3);
  }

  TEST_CASE("shears touch exactly one coordinate") {
    std::mt19937_64 rng(2);
    const auto s = random_stack(rng, 4, 8);
    for (std::size_t k = 0; k < s.depth(); ++k) {
      const auto x = random_point(rng, 4, 0.2);
      const auto y = symp::shear_forward(x, s, k);
      if (s.layers[k].kind == Kind::up) {
        CHECK(y.p == x.p);
        CHECK(y.q != x.q);
      } else {
        CHECK(y.q == x.q);
        CHECK(y.p != x.p);
      }
    }
  }

  TEST_CASE("single shear inverse conventions agree") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      const auto s = random_stack(rng, 3, 4);
      const std::size_t k = static_cast<std::size_t>(trial) % 4;
      const auto x = random_point(rng, 3, 0.3);
      const auto y = symp::shear_forward(x, s, k);
      const auto back = symp::shear_inverse(y, s, k);
      CHECK(max_diff(back, x) <= 1e-12);
      PhasePoint neg = y;
      neg.dt = -y.dt;
      auto again = symp::shear_forward(neg, s, k);
      again.dt = x.dt;
      CHECK(max_diff(again, back) == 0.0);
    }
  }

  TEST_CASE("stack roundtrip and composition order") {
    std::mt19937_64 rng(4);
    const auto empty = symp::make_zero_stack(2, {});
    const auto x0 = random_point(rng, 2, 0.1);
    CHECK(max_diff(symp::stack_forward(x0, empty), x0) == 0.0);

    for (std::size_t depth : {6u, 12u}) {
      const auto s = random_stack(rng, 5, depth);
      const auto x = random_point(rng, 5, 0.2);
      CHECK(max_diff(symp::stack_inverse(symp::stack_forward(x, s), s), x) <= 1e-10);
    }
    const auto s = random_stack(rng, 3, 2);
    const auto x = random_point(rng, 3, 0.2);
    const auto manual = symp::shear_forward(symp::shear_forward(x, s, 0), s, 1);
    CHECK(max_diff(symp::stack_forward(x, s), manual) == 0.0);
  }

  TEST_CASE("linear weights are exactly symmetric") {
    std::mt19937_64 rng(5);
    const auto s = random_stack(rng, 6, 4);
    const Eigen::MatrixXd w = s.symmetric_weight(0);
    CHECK((w - w.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("analytic jacobian") {
    std::mt19937_64 rng(6);
    const auto id = symp::make_zero_stack(3, symp::la_pattern(1));
    CHECK(symp::analytic_jacobian(random_point(rng, 3, 0.1), id).isIdentity(0.0));

    auto low = symp::make_zero_stack(2, {{Kind::low, FnKind::linear}});
    low.params.set(symp::param_name(0, "weight"), ad::Tensor::matrix(2, 2, {1.0, 0.4, 0.0, -2.0}));
    const Eigen::MatrixXd j = symp::analytic_jacobian({{0.3, 0.1}, {0.0, 1.0}, 0.5}, low);
    Eigen::MatrixXd expected = Eigen::MatrixXd::Identity(4, 4);
    expected.bottomLeftCorner(2, 2) << 0.5, 0.2, 0.2, -1.0;
    CHECK((j - expected).cwiseAbs().maxCoeff() <= 1e-15);

    for (int trial = 0; trial < 20; ++trial) {
      const auto s = random_stack(rng, 3, 6);
      const auto x = random_point(rng, 3, 0.25);
      const Eigen::MatrixXd ja = symp::analytic_jacobian(x, s);
      CHECK((ja - fd_jacobian(x, s)).cwiseAbs().maxCoeff() <= 1e-5);
      CHECK(symp::symplectic_defect(ja) <= 1e-8);
      CHECK(std::abs(ja.determinant() - 1.0) <= 1e-8);
    }
  }

  TEST_CASE("graph forward matches eager evaluation") {
    std::mt19937_64 rng(7);
    auto s = random_stack(rng, 3, 8);
    std::vector<PhasePoint> xs;
    for (int i = 0; i < 4; ++i) xs.push_back(random_point(rng, 3, 0.2));
    ad::Tensor q = ad::Tensor::zeros(4, 3), p = ad::Tensor::zeros(4, 3);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 3; ++k) {
        q.at(i, k) = xs[i].q[k];
        p.at(i, k) = xs[i].p[k];
      }
    ad::Graph g;
    ad::BoundParams bp(g, s.params, ad::all_trainable);
    auto [qf, pf] = symp::forward_graph(g.constant(q), g.constant(p), 0.2, s, bp);
    auto [qb, pb] = symp::forward_graph(qf, pf, 0.2, s, bp, true);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto y = symp::stack_forward(xs[i], s);
      const auto z = symp::stack_inverse(y, s);
      for (std::size_t k = 0; k < 3; ++k) {
        CHECK(qf.value().at(i, k) == y.q[k]);
        CHECK(pf.value().at(i, k) == y.p[k]);
        CHECK(qb.value().at(i, k) == z.q[k]);
        CHECK(pb.value().at(i, k) == z.p[k]);
      }
    }

    // parameter gradient of a forward loss against central differences
    const std::string name = symp::param_name(0, "weight");
    auto loss_of = [&](const ad::Tensor& w) {
      auto t = s;
      t.params.set(name, w);
      double acc = 0.0;
      for (const auto& x : xs) {
        const auto y = symp::stack_forward(x, t);
        for (std::size_t k = 0; k < 3; ++k) acc += y.q[k] * y.q[k] + y.p[k] * y.p[k];
      }
      return acc;
    };
    auto grads = g.backward(ad::add(ad::sum(ad::square(qf)), ad::sum(ad::square(pf))));
    const ad::Tensor an = bp.gradients(grads).get(name);
    const ad::Tensor fd = testing::finite_difference(loss_of, s.params.get(name));
    for (std::size_t i = 0; i < an.size(); ++i) {
      if (std::abs(an[i]) > 1e-8) CHECK(std::abs(an[i] - fd[i]) / std::abs(an[i]) <= 1e-4);
    }
  }

  TEST_CASE("dropconnect masks keep forward and inverse paired") {
    std::mt19937_64 rng(8);
    const auto s = random_stack(rng, 3, 8);
    const auto masks = symp::sample_dropconnect(s, 0.4, rng);
    CHECK(masks.size() == 4);
    ad::Graph g;
    ad::BoundParams bp(g, s.params, ad::all_trainable);
    const ad::Tensor q0 = testing::random_tensor(rng, 5, 3), p0 = testing::random_tensor(rng, 5, 3);
    auto [qf, pf] = symp::forward_graph(g.constant(q0), g.constant(p0), 0.3, s, bp, false, &masks);
    auto [qb, pb] = symp::forward_graph(qf, pf, 0.3, s, bp, true, &masks);
    CHECK(testing::max_abs_diff(qb.value(), q0) <= 1e-12);
    CHECK(testing::max_abs_diff(pb.value(), p0) <= 1e-12);
  }

  TEST_CASE("dimension mismatch") {
    const auto s = symp::make_zero_stack(2, symp::la_pattern(1));
    CHECK_THROWS_AS(symp::stack_forward({{1.0}, {1.0}, 0.1}, s), ShapeError);
    CHECK_THROWS_AS(symp::analytic_jacobian({{1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}, 0.1}, s), ShapeError);
  }
}
