#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "metasym/datagen/trajectory.hpp"

namespace metasym::datagen {

/// Independent per-system seed derived from a master seed (splitmix64).
std::uint64_t substream_seed(std::uint64_t master, std::uint64_t index);

struct OscillatorSystem {
  double mass = 1.0;
  double k = 1.0;
  double x0 = 1.0;
  double v0 = 0.0;
  double dt = 0.01;
  std::size_t steps = 3000;
};

/// Closed-form rotation of (x, p) with p = m v; exact to rounding.
Trajectory gen_oscillator(const OscillatorSystem& sys, const std::string& id = "oscillator");
double oscillator_energy(const OscillatorSystem& sys, double x, double p);

/// nx x ny lattice of unit spacing with springs of rest length 1 between
/// 4-neighbours. q holds 2-D node displacements, p = mass * velocity.
struct SpringMeshSystem {
  std::size_t nx = 3;
  std::size_t ny = 3;
  double mass = 1.0;
  double k_spring = 0.1;
  double gamma = 0.1;
  double dt = 0.01;
  std::size_t steps = 2000;
  double init_scale = 0.3;
  bool fix_top = true;
  // Explicit initial displacement (length 2*nx*ny); sampled from init_scale when empty.
  std::vector<double> q0;
};

std::size_t mesh_dim(const SpringMeshSystem& sys);
double spring_mesh_energy(const SpringMeshSystem& sys, const std::vector<double>& q, const std::vector<double>& p);
/// Symplectic Euler with linear velocity damping. Throws SimulationError when
/// the energy grows beyond ten times its initial value.
Trajectory gen_spring_mesh(const SpringMeshSystem& sys, std::uint64_t seed, const std::string& id = "spring");

enum class SmeScheme { euler_maruyama, milstein };

struct QuantumSystem {
  std::size_t fock_dim = 20;
  double omega = 1.0;
  double chi = 0.0;
  double beta = 0.0;
  double gamma = 0.3;
  double nth = 0.0;
  double eta = 1.0;
  double dt = 0.5;
  std::size_t steps = 600;
  std::complex<double> alpha0 = {1.0, 0.0};
  // Start from Fock state |initial_fock> instead of a coherent state when >= 0.
  int initial_fock = -1;
  // Integration substeps per record step; 0 chooses them per record step
  // from the current state (see quantum_substeps).
  std::size_t substeps = 0;
  // Measurement operator of the conditioned Kraus step: first order in the
  // record increments (the Euler-Maruyama step of the SME) or with the
  // second-order Ito correction (default). Both keep rho positive.
  SmeScheme scheme = SmeScheme::milstein;
};

struct QuantumDiagnostics {
  // Trace defect of the unconditioned first-order step before renormalization,
  // max over substeps; it grows with dt_sub.
  double max_trace_deviation = 0.0;
  double min_eigenvalue = 0.0;       // over record steps
  double max_top_population = 0.0;   // population of the two highest Fock levels
  std::size_t trace_flags = 0;
  std::size_t max_substeps = 0;
  std::size_t negativity_flags = 0;
  // Entry k is taken at time k * dt, starting from the initial state.
  std::vector<double> photon_number;
  std::vector<std::complex<double>> amplitude;
};

/// Substeps for one record step given m2 = tr(R^2 rho), R = sum L^dag L: the
/// smallest count with dt_sub <= 0.01 and (dt_sub / 2)^2 m2 <= 1.5e-4, so the
/// trace defect before renormalization starts well below 1e-3.
std::size_t quantum_substeps(const QuantumSystem& sys, double decay_moment);
nlohmann::json quantum_json(const QuantumSystem& sys);

/// Heterodyne-monitored SME: exact unitary step, then a conditioned Kraus step
/// M rho M^dag plus the unmonitored jump terms, trace renormalization and
/// Hermitization. To first order in dt this is the Euler-Maruyama step of the
/// SME; unlike the additive form it cannot leave the positive cone. Records per step of dt the quadrature
/// increments X = sqrt(2 eta) Re<a> dt + dW_x and P likewise with Im<a>,
/// stored as q and p of a d = 1 trajectory.
Trajectory gen_quantum_sme(const QuantumSystem& sys, std::uint64_t seed, const std::string& id = "quantum",
                           QuantumDiagnostics* diagnostics = nullptr);

/// Deterministic master equation (no measurement) integrated with the same
/// scheme; returns <a^dag a> at times k * dt for k = 0..steps.
std::vector<double> quantum_master_photon_number(const QuantumSystem& sys);

/// Additive N(0, sigma^2) on q and p; controls untouched.
Trajectory inject_noise(const Trajectory& traj, double sigma, std::uint64_t seed);

using SystemVariant = std::variant<SpringMeshSystem, OscillatorSystem, QuantumSystem>;

struct SystemSpec {
  std::string table;
  std::string id;
  std::uint64_t seed = 0;
  SystemVariant system;
};

struct SampleOptions {
  std::size_t steps = 0;  // 0 keeps the table's T
  std::size_t nx = 3;
  std::size_t ny = 3;
  std::size_t fock_dim = 20;
};

/// Tables: "2a", "2b" (spring mesh), "2a-cons" (2a with gamma = 0),
/// "2a-extreme" (gamma = 2.0), "3a", "3b" (quantum), "8in", "8out" (oscillator).
std::vector<SystemSpec> sample_system_params(const std::string& table, std::size_t count, std::uint64_t seed,
                                             const SampleOptions& options = {});
std::vector<std::string> table_ids();

/// Quantum systems whose top Fock levels fill up are retried with N enlarged
/// by 10 up to twice; the trajectory's params record the N actually used.
/// Throws TruncationError when the largest basis still fills up.
Trajectory generate(const SystemSpec& spec);

struct Corpus {
  std::vector<SystemSpec> specs;
  std::vector<Trajectory> trajectories;
  std::vector<SystemSpec> rejected;
};

/// Draws systems from the table in order until `count` generate; systems
/// rejected for truncation are skipped and listed, so ids may have gaps.
/// Gives up after `count` rejections.
Corpus generate_corpus(const std::string& table, std::size_t count, std::uint64_t seed,
                       const SampleOptions& options = {});
nlohmann::json to_json(const SystemSpec& spec);

}  // namespace metasym::datagen
