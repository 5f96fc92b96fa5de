#include <cmath>
#include <numbers>
#include <set>
#include <random>

#include "doctest.h"
#include "metasym/datagen/datagen.hpp"
#include "metasym/error.hpp"

using namespace metasym;
using namespace metasym::datagen;

namespace {

double sample_variance(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST_SUITE("datagen") {
  TEST_CASE("oscillator follows the closed-form rotation") {
    OscillatorSystem s{.mass = 1.0, .k = 1.0, .x0 = 1.0, .v0 = 0.0, .dt = std::numbers::pi / 200.0, .steps = 101};
    const Trajectory tr = gen_oscillator(s);
    CHECK(tr.steps() == 101);
    CHECK(tr.q[0] == 1.0);
    CHECK(tr.p[0] == 0.0);
    CHECK(std::abs(tr.q[100]) < 1e-12);
    CHECK(std::abs(tr.p[100] + 1.0) < 1e-12);
  }

  TEST_CASE("oscillator energy is conserved to rounding") {
    OscillatorSystem s{.mass = 2.5, .k = 0.7, .x0 = -0.4, .v0 = 1.3, .dt = 0.05, .steps = 2000};
    const Trajectory tr = gen_oscillator(s);
    const double e0 = oscillator_energy(s, tr.q[0], tr.p[0]);
    for (std::size_t t = 0; t < tr.steps(); ++t) CHECK(std::abs(oscillator_energy(s, tr.q[t], tr.p[t]) - e0) < 1e-12);
  }

  TEST_CASE("spring mesh at rest stays at rest") {
    SpringMeshSystem s;
    s.q0.assign(mesh_dim(s), 0.0);
    s.steps = 200;
    const Trajectory tr = gen_spring_mesh(s, 1);
    for (double v : tr.q) CHECK(v == 0.0);
    for (double v : tr.p) CHECK(v == 0.0);
  }

  TEST_CASE("two-node spring oscillates with period 2 pi / sqrt(2K/m)") {
    SpringMeshSystem s{.nx = 2, .ny = 1, .mass = 1.0, .k_spring = 1.0, .gamma = 0.0, .dt = 1e-3, .steps = 15000};
    s.fix_top = false;
    s.q0 = {0.0, 0.0, 0.01, 0.0};
    const Trajectory tr = gen_spring_mesh(s, 0);
    std::vector<double> crossings;
    double prev = tr.q[2] - tr.q[0];
    for (std::size_t t = 1; t < tr.steps(); ++t) {
      const double cur = tr.q[4 * t + 2] - tr.q[4 * t];
      if (prev > 0.0 && cur <= 0.0) crossings.push_back(static_cast<double>(t - 1) + prev / (prev - cur));
      prev = cur;
    }
    REQUIRE(crossings.size() >= 3);
    const double period = (crossings.back() - crossings.front()) / static_cast<double>(crossings.size() - 1) * s.dt;
    const double expected = 2.0 * std::numbers::pi / std::sqrt(2.0);
    CHECK(std::abs(period - expected) / expected < 0.01);
  }

  TEST_CASE("undamped mesh energy drifts by under one percent") {
    SpringMeshSystem s{.nx = 3, .ny = 3, .mass = 1.0, .k_spring = 0.4, .gamma = 0.0, .dt = 0.005, .steps = 4000};
    const Trajectory tr = gen_spring_mesh(s, 7);
    const auto first = tr.point(0);
    const double e0 = spring_mesh_energy(s, first.q, first.p);
    REQUIRE(e0 > 0.0);
    double worst = 0.0;
    for (std::size_t t = 0; t < tr.steps(); ++t) {
      const auto x = tr.point(t);
      worst = std::max(worst, std::abs(spring_mesh_energy(s, x.q, x.p) - e0) / e0);
    }
    CHECK(worst <= 0.01);
  }

  TEST_CASE("damping dissipates mesh energy") {
    SpringMeshSystem s{.nx = 3, .ny = 3, .mass = 1.0, .k_spring = 0.4, .gamma = 0.2, .dt = 0.01, .steps = 3000};
    const Trajectory tr = gen_spring_mesh(s, 7);
    const auto a = tr.point(0), b = tr.point(tr.steps() - 1);
    CHECK(spring_mesh_energy(s, b.q, b.p) < 0.1 * spring_mesh_energy(s, a.q, a.p));
  }

  TEST_CASE("fixed top row never moves") {
    SpringMeshSystem s{.nx = 3, .ny = 3, .steps = 300};
    const Trajectory tr = gen_spring_mesh(s, 3);
    for (std::size_t t = 0; t < tr.steps(); ++t)
      for (std::size_t n = 6; n < 9; ++n) CHECK(tr.q[t * 18 + 2 * n] == 0.0);
  }

  TEST_CASE("unstable step size is reported") {
    SpringMeshSystem s{.nx = 3, .ny = 3, .mass = 0.1, .k_spring = 5.0, .gamma = 0.0, .dt = 0.5, .steps = 400};
    CHECK_THROWS_AS(gen_spring_mesh(s, 1), SimulationError);
  }

  TEST_CASE("noise injection") {
    OscillatorSystem s{.steps = 5000};
    Trajectory clean = gen_oscillator(s);
    clean.m = 1;
    for (std::size_t t = 0; t < clean.steps(); ++t) clean.u.push_back(static_cast<double>(t));
    CHECK(inject_noise(clean, 0.0, 1) == clean);
    const Trajectory noisy = inject_noise(clean, 0.1, 1);
    CHECK(noisy.u == clean.u);
    std::vector<double> dq, dp;
    for (std::size_t i = 0; i < clean.q.size(); ++i) {
      dq.push_back(noisy.q[i] - clean.q[i]);
      dp.push_back(noisy.p[i] - clean.p[i]);
    }
    CHECK(std::abs(sample_variance(dq) / 0.01 - 1.0) < 0.1);
    CHECK(std::abs(sample_variance(dp) / 0.01 - 1.0) < 0.1);
    CHECK(inject_noise(clean, 0.1, 1) == noisy);
    CHECK_THROWS(inject_noise(clean, -1.0, 1));
  }

  TEST_CASE("parameter tables sample inside their ranges") {
    for (const auto& spec : sample_system_params("2a", 50, 11)) {
      const auto& s = std::get<SpringMeshSystem>(spec.system);
      CHECK(s.gamma >= 0.1);
      CHECK(s.gamma <= 0.2);
      CHECK(s.mass >= 0.1);
      CHECK(s.mass <= 2.0);
      CHECK(s.k_spring >= 0.001);
      CHECK(s.k_spring <= 0.5);
      CHECK(s.dt >= 0.001);
      CHECK(s.dt <= 0.03);
      CHECK(s.steps == 2000);
    }
    for (const auto& spec : sample_system_params("2b", 50, 11)) {
      const auto& s = std::get<SpringMeshSystem>(spec.system);
      CHECK(s.gamma >= 0.01);
      CHECK(s.gamma <= 0.05);
      CHECK(s.dt >= 0.1);
      CHECK(s.dt <= 0.3);
    }
    for (const auto& spec : sample_system_params("2a-cons", 10, 11)) CHECK(std::get<SpringMeshSystem>(spec.system).gamma == 0.0);
    for (const auto& spec : sample_system_params("2a-extreme", 10, 11)) CHECK(std::get<SpringMeshSystem>(spec.system).gamma == 2.0);
    for (const auto& spec : sample_system_params("3b", 20, 11)) {
      const auto& s = std::get<QuantumSystem>(spec.system);
      CHECK(s.dt == 0.5);
      CHECK(s.steps == 600);
    }
  }

  TEST_CASE("sampling is deterministic per seed") {
    const auto a = sample_system_params("2a", 5, 42), b = sample_system_params("2a", 5, 42);
    const auto c = sample_system_params("2a", 5, 43);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(to_json(a[i]) == to_json(b[i]));
      CHECK(a[i].seed == b[i].seed);
    }
    CHECK(to_json(a[0]) != to_json(c[0]));
    CHECK(a[0].id == "2a-0000");
    CHECK(generate(a[1]) == generate(b[1]));
    CHECK_THROWS(sample_system_params("nope", 1, 0));
  }

  TEST_CASE("substream seeds are distinct") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(substream_seed(5, i));
    CHECK(seen.size() == 1000);
  }

  TEST_CASE("closed quantum system rotates the coherent amplitude") {
    QuantumSystem s;
    s.gamma = 0.0;
    s.omega = 0.8;
    s.alpha0 = {1.0, 0.5};
    s.steps = 40;
    QuantumDiagnostics dg;
    gen_quantum_sme(s, 1, "closed", &dg);
    for (std::size_t k = 0; k < dg.amplitude.size(); ++k) {
      const double t = static_cast<double>(k) * s.dt;
      const std::complex<double> expected = s.alpha0 * std::exp(std::complex<double>(0.0, -s.omega * t));
      CHECK(std::abs(dg.amplitude[k] - expected) <= 1e-6);
    }
  }

  TEST_CASE("monitored density matrix stays a valid state") {
    for (const auto& spec : sample_system_params("3a", 2, 5, {.steps = 60})) {
      QuantumSystem s = std::get<QuantumSystem>(spec.system);
      s.fock_dim = 30;
      QuantumDiagnostics dg;
      gen_quantum_sme(s, spec.seed, spec.id, &dg);
      CHECK(dg.max_trace_deviation <= 1e-3);
      CHECK(dg.trace_flags == 0);
      CHECK(dg.min_eigenvalue >= -1e-6);
      CHECK(dg.negativity_flags == 0);
    }
  }

  TEST_CASE("Fock states under full-efficiency monitoring stay positive") {
    QuantumSystem s;
    s.initial_fock = 3;
    s.eta = 1.0;
    s.steps = 20;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      QuantumDiagnostics dg;
      gen_quantum_sme(s, seed, "fock", &dg);
      CHECK(dg.min_eigenvalue >= -1e-6);
      CHECK(dg.negativity_flags == 0);
    }
  }

  TEST_CASE("trace defect before renormalization is second order in the substep") {
    QuantumSystem s;
    s.initial_fock = 3;
    s.steps = 4;
    s.substeps = 10;
    QuantumDiagnostics coarse, fine;
    gen_quantum_sme(s, 3, "q", &coarse);
    s.substeps = 20;
    gen_quantum_sme(s, 3, "q", &fine);
    // Halving dt_sub divides the defect (dt_sub / 2)^2 tr((L^dag L)^2 rho) by about four.
    CHECK(coarse.max_trace_deviation > 0.0);
    CHECK(coarse.max_trace_deviation / fine.max_trace_deviation == doctest::Approx(4.0).epsilon(0.1));
  }

  TEST_CASE("master equation photon number decays at rate gamma") {
    QuantumSystem s;
    s.gamma = 0.3;
    s.alpha0 = {1.5, 0.0};
    s.steps = 20;
    const auto n = quantum_master_photon_number(s);
    REQUIRE(n.size() == 21);
    for (std::size_t k = 0; k < n.size(); ++k) {
      const double expected = n[0] * std::exp(-s.gamma * static_cast<double>(k) * s.dt);
      CHECK(std::abs(n[k] - expected) <= 1e-2 * n[0]);
    }
    s.nth = 0.4;
    s.steps = 80;
    CHECK(std::abs(quantum_master_photon_number(s).back() - 0.4) < 1e-2);
  }

  TEST_CASE("ensemble of monitored runs matches the master equation") {
    QuantumSystem s;
    s.fock_dim = 15;
    s.gamma = 0.5;
    s.eta = 0.8;
    s.alpha0 = {1.2, 0.0};
    s.steps = 6;
    const double master = quantum_master_photon_number(s).back();
    std::vector<double> finals;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      QuantumDiagnostics dg;
      gen_quantum_sme(s, seed, "ens", &dg);
      finals.push_back(dg.photon_number.back());
    }
    double mean = 0.0;
    for (double v : finals) mean += v;
    mean /= static_cast<double>(finals.size());
    const double se = std::sqrt(sample_variance(finals) / static_cast<double>(finals.size()));
    CHECK(std::abs(mean - master) <= 4.0 * se + 1e-3);
  }

  TEST_CASE("unmonitored record is white noise with variance dt/2") {
    QuantumSystem s;
    s.fock_dim = 8;
    s.eta = 0.0;
    s.steps = 3000;
    s.substeps = 5;
    const Trajectory tr = gen_quantum_sme(s, 9);
    CHECK(tr.d == 1);
    CHECK(tr.steps() == 3000);
    CHECK(std::abs(sample_variance(tr.q) / (s.dt / 2.0) - 1.0) < 0.1);
    CHECK(std::abs(sample_variance(tr.p) / (s.dt / 2.0) - 1.0) < 0.1);
  }

  TEST_CASE("substep rule bounds the trace defect") {
    QuantumSystem s;
    s.gamma = 2.7;
    s.nth = 0.3;
    for (const double m2 : {0.0, 1.0, 37.0, 1e4}) {
      const double sub = s.dt / static_cast<double>(quantum_substeps(s, m2));
      CHECK(sub <= 0.01);
      CHECK(0.25 * sub * sub * m2 <= 1.5e-4 * (1.0 + 1e-12));
    }
    CHECK(quantum_substeps(s, 0.0) == 50);
    s.substeps = 7;
    CHECK(quantum_substeps(s, 1e4) == 7);
  }

  TEST_CASE("state-dependent substeps keep the measured defect below the flag") {
    QuantumSystem s;
    s.gamma = 0.4;
    s.nth = 0.5;
    s.alpha0 = {2.0, 0.0};
    s.fock_dim = 30;
    s.steps = 40;
    QuantumDiagnostics diag;
    gen_quantum_sme(s, 3, "q", &diag);
    CHECK(diag.max_trace_deviation <= 1e-3);
    CHECK(diag.trace_flags == 0);
    CHECK(diag.max_substeps > 50);
  }

  TEST_CASE("truncated Fock basis is enlarged or rejected") {
    QuantumSystem s;
    s.fock_dim = 8;
    s.alpha0 = {2.0, 0.0};
    s.gamma = 0.1;
    s.steps = 4;
    CHECK_THROWS_AS(gen_quantum_sme(s, 1), TruncationError);
    const SystemSpec spec{"3a", "big", 1, s};
    const Trajectory tr = generate(spec);
    CHECK(tr.params["fock_dim"].get<std::size_t>() > 8);
    // Beyond two enlargements the system is rejected.
    s.alpha0 = {5.0, 0.0};
    CHECK_THROWS_AS(generate(SystemSpec{"3a", "huge", 1, s}), TruncationError);
  }

  TEST_CASE("corpus skips rejected systems and keeps drawing") {
    const auto corpus = generate_corpus("8in", 3, 4, {.steps = 10});
    CHECK(corpus.specs.size() == 3);
    CHECK(corpus.trajectories.size() == 3);
    CHECK(corpus.rejected.empty());
    CHECK(corpus.trajectories[2].system_id == "8in-0002");
    CHECK(generate_corpus("8in", 0, 4).specs.empty());
  }
}
