#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "metasym/error.hpp"
#include "metasym/verify/verify.hpp"

using namespace metasym;
using verify::State;

namespace {

std::vector<State> random_points(std::size_t n, std::size_t dim, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<State> out(n, State(dim));
  for (auto& x : out)
    for (double& v : x) v = g(rng);
  return out;
}

// Random stack with weights far from the near-identity init.
symp::SympStack strong_stack(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  symp::SympStack s = symp::make_stack(d, symp::la_pattern(3), rng);
  for (const auto& [name, t] : ad::ParamTable(s.params)) s.params.set(name, testing::random_tensor(rng, t.rows(), t.cols(), 0.5));
  return s;
}

rollout::Model random_model(std::size_t d, std::uint64_t seed, double head_scale) {
  std::mt19937_64 rng(seed);
  decoder::DecoderConfig cfg{.heads = 2, .context = 1};
  rollout::Model m;
  m.encoder = strong_stack(d, seed + 1);
  m.decoder = decoder::make_decoder(d, 0, cfg, rng);
  m.zeta = decoder::init_zeta(m.decoder, 0.3, rng);
  m.decoder.global.set("head.W2", testing::random_tensor(rng, m.decoder.hidden, 2 * d, head_scale));
  m.decoder.global.set("head.b2", testing::random_tensor(rng, 1, 2 * d, head_scale));
  return m;
}

double spectral(const Eigen::MatrixXd& m) { return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0); }

}  // namespace

TEST_SUITE("verify") {
  TEST_CASE("identity and scaling maps") {
    const auto pts = random_points(10, 4, 1);
    const verify::Map id = [](const State& x) { return x; };
    const auto r = verify::symplectic_report(id, pts, verify::JacobianMode::finite_diff);
    CHECK(r.defect <= 1e-9);
    CHECK(r.det_dev <= 1e-9);
    CHECK(r.points == 10);
    // x -> 2x: J^T Omega J - Omega = 3 Omega, spectral norm 3, det 16.
    const verify::Map twice = [](const State& x) {
      State y = x;
      for (double& v : y) v *= 2.0;
      return y;
    };
    const auto s = verify::symplectic_report(twice, pts, verify::JacobianMode::finite_diff);
    CHECK(s.defect == doctest::Approx(3.0).epsilon(1e-8));
    CHECK(s.det_dev == doctest::Approx(15.0).epsilon(1e-8));
    CHECK_THROWS_AS(verify::symplectic_report(id, pts, verify::JacobianMode::analytic), Error);
  }

  TEST_CASE("non-finite Jacobian is an error") {
    const verify::Map bad = [](const State& x) { return State(x.size(), std::nan("")); };
    CHECK_THROWS_AS(verify::fd_jacobian(bad, {1.0, 2.0}), NonFiniteError);
  }

  TEST_CASE("encoder Jacobian modes agree and are symplectic") {
    const auto stack = strong_stack(3, 7);
    const auto pts = random_points(20, 6, 2);
    const auto a = verify::encoder_report(stack, pts, 0.1, verify::JacobianMode::analytic);
    const auto f = verify::encoder_report(stack, pts, 0.1, verify::JacobianMode::finite_diff);
    CHECK(a.defect <= 1e-8);
    CHECK(std::abs(a.defect - f.defect) <= 1e-4);
    CHECK(std::abs(a.det_dev - f.det_dev) <= 1e-4);
    for (const auto& x : pts) {
      const Eigen::MatrixXd ja = symp::analytic_jacobian(symp::PhasePoint::from_flat(x, 0.1), stack);
      const Eigen::MatrixXd jf = verify::fd_jacobian(
          [&](const State& y) { return symp::stack_forward(symp::PhasePoint::from_flat(y, 0.1), stack).flat(); }, x);
      CHECK((ja - jf).cwiseAbs().maxCoeff() <= 1e-4);
    }
  }

  TEST_CASE("zero correction leaves the encoder bound degenerate") {
    rollout::Model m = random_model(2, 3, 0.0);
    const auto pts = random_points(5, 4, 4);
    const auto b = verify::perturbation_bound(m, pts, 0.1);
    CHECK(b.rho_hat == 0.0);
    CHECK(b.defect <= 1e-8);
    CHECK(b.c_hat == 0.0);
    m.use_decoder = false;
    CHECK(verify::perturbation_bound(m, pts, 0.1).rho_hat == 0.0);
  }

  TEST_CASE("composed defect obeys the exact perturbation bound") {
    // With Psi = Phi + G-perturbation and dPhi^T Omega dPhi = Omega:
    // ||dPsi^T Omega dPsi - Omega|| <= 2 ||dPhi|| ||G|| + ||G||^2,
    // where G is the total Jacobian of x -> F(x, Phi(x)).
    for (std::uint64_t seed : {11, 12, 13}) {
      const rollout::Model m = random_model(2, seed, 0.05);
      const double dt = 0.1;
      const verify::Map psi = verify::composed_map(m, dt);
      const verify::Map phi = [&](const State& x) {
        return symp::stack_forward(symp::PhasePoint::from_flat(x, dt), m.encoder).flat();
      };
      for (const auto& x : random_points(5, 4, seed)) {
        const Eigen::MatrixXd jphi = verify::fd_jacobian(phi, x);
        const Eigen::MatrixXd g = verify::fd_jacobian(psi, x) - jphi;
        const double bound = 2.0 * spectral(jphi) * spectral(g) + spectral(g) * spectral(g);
        const double defect = symp::symplectic_defect(verify::fd_jacobian(psi, x));
        CHECK(defect > 0.0);
        CHECK(defect <= bound + 1e-7);
      }
    }
  }

  TEST_CASE("output scaling sweep scales the perturbation norm linearly") {
    const rollout::Model m = random_model(2, 21, 0.05);
    const auto pts = random_points(4, 4, 5);
    const auto sweep = verify::scaling_sweep(m, pts, 0.1, {0.5, 1.0, 2.0});
    REQUIRE(sweep.size() == 3);
    for (const auto& p : sweep) CHECK(p.rho_hat / p.scale == doctest::Approx(sweep[1].rho_hat).epsilon(1e-6));
    CHECK(sweep[0].defect < sweep[1].defect);
    CHECK(sweep[1].defect < sweep[2].defect);
  }

  TEST_CASE("energy drift") {
    std::vector<double> e;
    for (int t = 0; t < 600; ++t) {
      const double q = std::cos(0.1 * t), p = -std::sin(0.1 * t);
      e.push_back(0.5 * (q * q + p * p));
    }
    const auto exact = verify::energy_drift(e);
    CHECK(exact.max_relative <= 1e-12);
    CHECK(std::abs(exact.slope) <= 1e-12);
    std::vector<double> lin;
    for (int t = 0; t < 50; ++t) lin.push_back(2.0 + 0.02 * t);
    const auto d = verify::energy_drift(lin);
    CHECK(d.slope == doctest::Approx(0.01).epsilon(1e-10));
    CHECK(d.max_relative == doctest::Approx(0.49).epsilon(1e-10));
    CHECK_THROWS_AS(verify::energy_drift({}), Error);
    CHECK_THROWS_AS(verify::energy_drift({0.0, 1.0}), Error);
  }

  TEST_CASE("shoelace area") {
    CHECK(verify::shoelace_area({0, 1, 1, 0}, {0, 0, 1, 1}) == 1.0);
    CHECK(verify::shoelace_area({0, 0, 1, 1}, {0, 1, 1, 0}) == 1.0);
    const std::size_t n = 10000;
    std::vector<double> q(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
      q[i] = std::cos(a);
      p[i] = std::sin(a);
    }
    CHECK(std::abs(verify::shoelace_area(q, p) - std::numbers::pi) <= 1e-6);
    CHECK_THROWS_AS(verify::shoelace_area({0, 1}, {0, 1}), Error);
    CHECK_THROWS_AS(verify::shoelace_area({0, 1, 2}, {0, 1}), ShapeError);
  }

  TEST_CASE("MLP budget and persistence at init") {
    CHECK(verify::mlp_param_count(1, 0, 4) == 3 * 4 + 4 + 16 + 4 + 4 * 2 + 2);
    const std::size_t h = verify::mlp_hidden_for_budget(9, 0, 15000);
    for (std::size_t w : {h - 1, h + 1}) {
      CHECK(std::abs(static_cast<double>(verify::mlp_param_count(9, 0, h)) - 15000.0) <=
            std::abs(static_cast<double>(verify::mlp_param_count(9, 0, w)) - 15000.0));
    }
    const auto m = verify::make_mlp(2, 1, {.hidden = 8, .seed = 1});
    CHECK(m.params.count() == verify::mlp_param_count(2, 1, 8));
    const State x{0.1, -0.2, 0.3, 0.4};
    CHECK(verify::mlp_step(m, x, 0.1, {0.5}) == x);
    CHECK_THROWS_AS(verify::mlp_step(m, x, 0.1, {}), ShapeError);
  }

  TEST_CASE("MLP fits a constant drift and is reproducible") {
    datagen::Trajectory tr;
    tr.system_id = "drift";
    tr.generator = "test";
    tr.d = 1;
    tr.dt = 0.1;
    for (int t = 0; t < 30; ++t) tr.push({0.01 * t}, {0.5});
    const std::vector<const datagen::Trajectory*> data{&tr};
    const verify::MlpConfig cfg{.hidden = 8, .lr = 1e-2, .epochs = 300, .seed = 2};
    const auto a = verify::train_mlp(data, cfg);
    const auto b = verify::train_mlp(data, cfg);
    CHECK(a.model.params == b.model.params);
    CHECK(a.losses == b.losses);
    CHECK(a.losses.back() < 1e-3 * a.losses.front());
    CHECK(verify::mlp_mse(a.model, tr) == doctest::Approx(a.losses.back()).epsilon(0.5));
    const auto roll = verify::mlp_rollout(a.model, tr.state(0), {}, tr.dt, 20);
    CHECK(roll.size() == 20);
    CHECK(std::abs(roll.back()[0] - 0.2) < 0.05);
  }

  TEST_CASE("diverged MLP rollout is padded with infinities") {
    auto m = verify::make_mlp(1, 0, {.hidden = 4, .seed = 3});
    m.params.set("out.b", ad::Tensor::filled(1, 2, 1e308));
    const auto r = verify::mlp_rollout(m, {1e308, 1e308}, {}, 10.0, 5);
    REQUIRE(r.size() == 5);
    CHECK(std::isinf(r.back()[0]));
  }
}
