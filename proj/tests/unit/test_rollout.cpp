#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "metasym/error.hpp"
#include "metasym/rollout/rollout.hpp"

using namespace metasym;
using rollout::State;

namespace {

datagen::Trajectory ramp(std::size_t steps, double slope, std::size_t diverge_at = 0) {
  datagen::Trajectory tr;
  tr.system_id = "ramp";
  tr.generator = "test";
  tr.d = 1;
  tr.dt = 0.1;
  for (std::size_t t = 0; t < steps; ++t) {
    const double x = static_cast<double>(t) * slope;
    const double bump = diverge_at && t >= diverge_at ? 100.0 : 0.0;
    tr.push({x + bump}, {-x});
  }
  return tr;
}

// Identity encoder plus a fresh decoder whose correction is dt * bias.
rollout::Model drift_model(double bq, double bp, std::size_t context) {
  std::mt19937_64 rng(3);
  decoder::DecoderConfig cfg{.heads = 2, .context = context};
  rollout::Model m;
  m.encoder = symp::make_zero_stack(1, symp::la_pattern(1));
  m.decoder = decoder::make_decoder(1, 0, cfg, rng);
  m.zeta = decoder::init_zeta(m.decoder, 0.3, rng);
  ad::Tensor b = ad::Tensor::zeros(1, 2);
  b.at(0, 0) = bq;
  b.at(0, 1) = bp;
  m.decoder.global.set("head.b2", b);
  return m;
}

}  // namespace

TEST_SUITE("rollout") {
  TEST_CASE("zero horizon and bad seeds") {
    const auto m = drift_model(1.0, 0.0, 3);
    CHECK(rollout::rollout(m, {{0, 0}, {0, 0}, {0, 0}}, {}, 0.1, 0).states.empty());
    CHECK_THROWS_AS(rollout::rollout(m, {{0, 0}}, {}, 0.1, 5), ShapeError);
    CHECK_THROWS_AS(rollout::rollout(m, {{0}, {0}, {0}}, {}, 0.1, 5), ShapeError);
  }

  TEST_CASE("identity encoder without decoder is persistence") {
    rollout::Model m;
    m.encoder = symp::make_zero_stack(1, symp::la_pattern(2));
    m.use_decoder = false;
    CHECK(m.context() == 1);
    const auto r = rollout::rollout(m, {{0.3, -0.7}}, {}, 0.1, 25);
    CHECK_FALSE(r.halted);
    CHECK(r.states == rollout::persistence({0.3, -0.7}, 25));
  }

  TEST_CASE("constant correction integrates linearly") {
    const auto m = drift_model(2.0, -1.0, 4);
    const std::vector<State> seed{{0, 0}, {0, 0}, {0, 0}, {1.0, 1.0}};
    const auto r = rollout::rollout(m, seed, {}, 0.1, 50);
    REQUIRE(r.states.size() == 50);
    for (std::size_t k = 0; k < 50; ++k) {
      const double steps = static_cast<double>(k + 1);
      CHECK(r.states[k][0] == doctest::Approx(1.0 + 0.2 * steps).epsilon(1e-12));
      CHECK(r.states[k][1] == doctest::Approx(1.0 - 0.1 * steps).epsilon(1e-12));
    }
  }

  TEST_CASE("future ground truth never leaks into the rollout") {
    rollout::Model m = drift_model(0.5, 0.5, 5);
    m.decoder.global.set("head.W2", ad::Tensor::filled(m.decoder.hidden, 2, 0.4));
    const auto clean = ramp(40, 0.05);
    const auto tampered = ramp(40, 0.05, 15);
    const auto a = rollout::rollout_from(m, clean, 10, 20);
    const auto b = rollout::rollout_from(m, tampered, 10, 20);
    CHECK(a.states == b.states);
    const auto c = rollout::rollout_from(m, tampered, 11, 20);
    CHECK(c.states != a.states);
    CHECK_THROWS_AS(rollout::rollout_from(m, clean, 36, 20), ShapeError);
  }

  TEST_CASE("non-finite prediction halts with partial output") {
    const auto m = drift_model(1e308, 0.0, 1);
    const auto r = rollout::rollout(m, {{1e308, 0.0}}, {}, 1.0, 10);
    CHECK(r.halted);
    CHECK(r.states.size() < 10);
    CHECK(r.message.find("rollout step") != std::string::npos);
  }

  TEST_CASE("rollout metrics") {
    const std::vector<State> truth{{1, 2}, {3, 4}, {5, 6}};
    const auto same = rollout::evaluate_rollout(truth, truth);
    CHECK(same.mse == 0.0);
    std::vector<State> off = truth;
    for (auto& s : off)
      for (double& v : s) v += 1.0;
    const auto one = rollout::evaluate_rollout(off, truth);
    CHECK(one.mse == 1.0);
    CHECK(one.per_step == std::vector<double>{1.0, 1.0, 1.0});
    CHECK(one.per_coordinate == std::vector<double>{1.0, 1.0});
    // Scalar oracle: errors (2, 2), (0, 0), (0, -4) give (4 + 4 + 16) / 6.
    const std::vector<State> pred{{3, 4}, {3, 4}, {5, 2}};
    const auto m = rollout::evaluate_rollout(pred, truth);
    CHECK(m.mse == doctest::Approx(4.0));
    CHECK(m.per_coordinate == std::vector<double>{4.0 / 3.0, 20.0 / 3.0});
    CHECK_THROWS_AS(rollout::evaluate_rollout({{1, 2}}, truth), ShapeError);
    CHECK(rollout::segment(ramp(5, 1.0), 1, 2) == std::vector<State>{{1, -1}, {2, -2}});
  }
}
