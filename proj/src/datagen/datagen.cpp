#include "metasym/datagen/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "metasym/error.hpp"
#include "metasym/log.hpp"

namespace metasym::datagen {
namespace {

constexpr double kTwoPi = 6.283185307179586;

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

void mesh_forces(const SpringMeshSystem& sys, const std::vector<double>& q, std::vector<double>& f) {
  std::fill(f.begin(), f.end(), 0.0);
  auto spring = [&](std::size_t i, std::size_t j, double bx, double by) {
    const double rx = bx + q[2 * j] - q[2 * i];
    const double ry = by + q[2 * j + 1] - q[2 * i + 1];
    const double len = std::hypot(rx, ry);
    if (len == 0.0) throw SimulationError("spring mesh nodes collapsed onto each other");
    const double s = sys.k_spring * (len - 1.0) / len;
    f[2 * i] += s * rx;
    f[2 * i + 1] += s * ry;
    f[2 * j] -= s * rx;
    f[2 * j + 1] -= s * ry;
  };
  for (std::size_t iy = 0; iy < sys.ny; ++iy) {
    for (std::size_t ix = 0; ix < sys.nx; ++ix) {
      const std::size_t n = iy * sys.nx + ix;
      if (ix + 1 < sys.nx) spring(n, n + 1, 1.0, 0.0);
      if (iy + 1 < sys.ny) spring(n, n + sys.nx, 0.0, 1.0);
    }
  }
}

bool is_fixed(const SpringMeshSystem& sys, std::size_t node) { return sys.fix_top && node / sys.nx == sys.ny - 1; }

nlohmann::json mesh_json(const SpringMeshSystem& s) {
  return {{"nx", s.nx},       {"ny", s.ny},       {"mass", s.mass},         {"k_spring", s.k_spring},
          {"gamma", s.gamma}, {"dt", s.dt},       {"steps", s.steps},       {"init_scale", s.init_scale},
          {"fix_top", s.fix_top}};
}

nlohmann::json oscillator_json(const OscillatorSystem& s) {
  return {{"mass", s.mass}, {"k", s.k}, {"x0", s.x0}, {"v0", s.v0}, {"dt", s.dt}, {"steps", s.steps}};
}

}  // namespace

std::uint64_t substream_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double oscillator_energy(const OscillatorSystem& sys, double x, double p) {
  return p * p / (2.0 * sys.mass) + 0.5 * sys.k * x * x;
}

Trajectory gen_oscillator(const OscillatorSystem& sys, const std::string& id) {
  if (!(sys.mass > 0.0) || !(sys.k > 0.0)) throw Error("oscillator needs m > 0 and k > 0");
  Trajectory tr;
  tr.system_id = id;
  tr.generator = "oscillator";
  tr.d = 1;
  tr.m = 0;
  tr.dt = sys.dt;
  tr.params = oscillator_json(sys);
  const double w = std::sqrt(sys.k / sys.mass);
  const double p0 = sys.mass * sys.v0;
  for (std::size_t i = 0; i < sys.steps; ++i) {
    const double t = static_cast<double>(i) * sys.dt;
    const double c = std::cos(w * t), s = std::sin(w * t);
    tr.push({c * sys.x0 + s / (sys.mass * w) * p0}, {-sys.mass * w * s * sys.x0 + c * p0});
  }
  return tr;
}

std::size_t mesh_dim(const SpringMeshSystem& sys) { return 2 * sys.nx * sys.ny; }

double spring_mesh_energy(const SpringMeshSystem& sys, const std::vector<double>& q, const std::vector<double>& p) {
  double e = 0.0;
  for (double v : p) e += v * v / (2.0 * sys.mass);
  auto spring = [&](std::size_t i, std::size_t j, double bx, double by) {
    const double len = std::hypot(bx + q[2 * j] - q[2 * i], by + q[2 * j + 1] - q[2 * i + 1]);
    e += 0.5 * sys.k_spring * (len - 1.0) * (len - 1.0);
  };
  for (std::size_t iy = 0; iy < sys.ny; ++iy) {
    for (std::size_t ix = 0; ix < sys.nx; ++ix) {
      const std::size_t n = iy * sys.nx + ix;
      if (ix + 1 < sys.nx) spring(n, n + 1, 1.0, 0.0);
      if (iy + 1 < sys.ny) spring(n, n + sys.nx, 0.0, 1.0);
    }
  }
  return e;
}

Trajectory gen_spring_mesh(const SpringMeshSystem& sys, std::uint64_t seed, const std::string& id) {
  if (sys.nx * sys.ny < 2) throw Error("spring mesh needs at least two nodes");
  if (!(sys.mass > 0.0) || sys.k_spring < 0.0 || sys.gamma < 0.0 || !(sys.dt > 0.0)) {
    throw Error("spring mesh parameters out of range");
  }
  const std::size_t d = mesh_dim(sys);
  const std::size_t nodes = sys.nx * sys.ny;
  std::vector<double> q(d, 0.0), p(d, 0.0), f(d, 0.0);
  if (!sys.q0.empty()) {
    if (sys.q0.size() != d) throw ShapeError("spring mesh q0 must have length 2*nx*ny");
    q = sys.q0;
  } else {
    std::mt19937_64 rng(seed);
    for (double& v : q) v = uniform(rng, -sys.init_scale, sys.init_scale);
  }
  for (std::size_t n = 0; n < nodes; ++n) {
    if (is_fixed(sys, n)) q[2 * n] = q[2 * n + 1] = 0.0;
  }

  Trajectory tr;
  tr.system_id = id;
  tr.generator = "spring_mesh";
  tr.d = d;
  tr.m = 0;
  tr.dt = sys.dt;
  tr.seed = seed;
  tr.params = mesh_json(sys);
  const double e0 = spring_mesh_energy(sys, q, p);
  for (std::size_t step = 0; step < sys.steps; ++step) {
    tr.push(q, p);
    if (step + 1 == sys.steps) break;
    mesh_forces(sys, q, f);
    for (std::size_t n = 0; n < nodes; ++n) {
      for (std::size_t c = 0; c < 2; ++c) {
        const std::size_t i = 2 * n + c;
        if (is_fixed(sys, n)) {
          p[i] = 0.0;
          continue;
        }
        p[i] += sys.dt * (f[i] - sys.gamma * p[i] / sys.mass);
        q[i] += sys.dt * p[i] / sys.mass;
      }
    }
    const double e = spring_mesh_energy(sys, q, p);
    if (!std::isfinite(e) || e > 10.0 * e0 + 1e-12) {
      throw SimulationError("spring mesh '" + id + "' unstable: energy grew from " + std::to_string(e0) + " to " +
                            std::to_string(e) + " at step " + std::to_string(step + 1) + " (dt " +
                            std::to_string(sys.dt) + ")");
    }
  }
  return tr;
}

Trajectory inject_noise(const Trajectory& traj, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw Error("noise level must be non-negative");
  Trajectory out = traj;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (std::size_t i = 0; i < out.q.size(); ++i) {
    out.q[i] += n(rng);
    out.p[i] += n(rng);
  }
  return out;
}

std::vector<std::string> table_ids() { return {"2a", "2b", "2a-cons", "2a-extreme", "3a", "3b", "8in", "8out"}; }

std::vector<SystemSpec> sample_system_params(const std::string& table, std::size_t count, std::uint64_t seed,
                                             const SampleOptions& options) {
  const auto ids = table_ids();
  if (std::find(ids.begin(), ids.end(), table) == ids.end()) throw Error("unknown parameter table '" + table + "'");
  std::vector<SystemSpec> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(substream_seed(seed, 2 * i));
    SystemSpec spec;
    spec.table = table;
    spec.seed = substream_seed(seed, 2 * i + 1);
    char id[32];
    std::snprintf(id, sizeof id, "%s-%04zu", table.c_str(), i);
    spec.id = id;
    if (table[0] == '2') {
      SpringMeshSystem s;
      s.nx = options.nx;
      s.ny = options.ny;
      s.steps = options.steps ? options.steps : 2000;
      if (table == "2b") {
        s.gamma = uniform(rng, 0.01, 0.05);
        s.mass = uniform(rng, 3.0, 5.0);
        s.k_spring = uniform(rng, 1.0, 3.0);
        s.init_scale = uniform(rng, 0.9, 2.5);
        s.dt = uniform(rng, 0.1, 0.3);
      } else {
        s.gamma = uniform(rng, 0.1, 0.2);
        s.mass = uniform(rng, 0.1, 2.0);
        s.k_spring = uniform(rng, 0.001, 0.5);
        s.init_scale = uniform(rng, 0.0, 0.6);
        s.dt = uniform(rng, 0.001, 0.03);
        if (table == "2a-cons") s.gamma = 0.0;
        if (table == "2a-extreme") s.gamma = 2.0;
      }
      spec.system = s;
    } else if (table[0] == '3') {
      QuantumSystem s;
      s.fock_dim = options.fock_dim;
      s.steps = options.steps ? options.steps : 600;
      s.dt = 0.5;
      if (table == "3a") {
        s.omega = uniform(rng, 0.5, 1.0);
        s.chi = uniform(rng, 0.1, 0.4);
        s.nth = uniform(rng, 0.1, 0.5);
        s.eta = uniform(rng, 0.7, 1.0);
        s.gamma = uniform(rng, 0.2, 0.4);
      } else {
        s.omega = uniform(rng, 0.1, 0.4);
        s.chi = uniform(rng, 0.5, 0.8);
        s.nth = uniform(rng, 0.6, 0.7);
        s.eta = uniform(rng, 0.4, 0.6);
        s.gamma = uniform(rng, 2.5, 3.0);
      }
      s.beta = uniform(rng, 0.005, 0.02);
      const double r = uniform(rng, 1.0, 2.0), phase = uniform(rng, 0.0, kTwoPi);
      s.alpha0 = std::polar(r, phase);
      spec.system = s;
    } else {
      OscillatorSystem s;
      s.dt = 0.01;
      if (table == "8in") {
        s.mass = uniform(rng, 0.5, 1.0);
        s.k = uniform(rng, 0.5, 4.0);
        s.x0 = uniform(rng, -1.0, 1.0);
        s.v0 = uniform(rng, -1.0, 1.0);
        s.steps = options.steps ? options.steps : 3000;
      } else {
        s.mass = uniform(rng, 2.5, 3.0);
        s.k = uniform(rng, 5.0, 6.0);
        s.x0 = uniform(rng, 1.0, 1.5);
        s.v0 = uniform(rng, -1.5, -1.0);
        s.steps = options.steps ? options.steps : 800;
      }
      spec.system = s;
    }
    out.push_back(std::move(spec));
  }
  return out;
}

Trajectory generate(const SystemSpec& spec) {
  Trajectory tr = std::visit(
      [&](const auto& s) -> Trajectory {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SpringMeshSystem>) {
          return gen_spring_mesh(s, spec.seed, spec.id);
        } else if constexpr (std::is_same_v<T, OscillatorSystem>) {
          return gen_oscillator(s, spec.id);
        } else {
          // Enlarge the Fock basis twice before giving up. The cubic drive
          // makes H unbounded below, so some systems never converge in N.
          QuantumSystem sys = s;
          for (int attempt = 0;; ++attempt) {
            try {
              return gen_quantum_sme(sys, spec.seed, spec.id);
            } catch (const TruncationError& e) {
              if (attempt == 2) throw;
              log::info(std::string(e.what()) + "; retrying with N = " + std::to_string(sys.fock_dim + 10));
              sys.fock_dim += 10;
            }
          }
        }
      },
      spec.system);
  tr.seed = spec.seed;
  return tr;
}

Corpus generate_corpus(const std::string& table, std::size_t count, std::uint64_t seed,
                       const SampleOptions& options) {
  Corpus out;
  for (auto& spec : sample_system_params(table, 2 * count, seed, options)) {
    if (out.specs.size() == count) break;
    try {
      out.trajectories.push_back(generate(spec));
      out.specs.push_back(std::move(spec));
    } catch (const TruncationError& e) {
      log::warn(std::string(e.what()) + "; rejecting '" + spec.id + "'");
      out.rejected.push_back(std::move(spec));
    }
  }
  if (out.specs.size() < count) {
    throw SimulationError("table '" + table + "': " + std::to_string(out.rejected.size()) +
                          " systems rejected for truncation");
  }
  return out;
}

nlohmann::json to_json(const SystemSpec& spec) {
  nlohmann::json j = {{"table", spec.table}, {"id", spec.id}, {"seed", spec.seed}};
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SpringMeshSystem>) {
          j["system"] = "spring";
          j["params"] = mesh_json(s);
        } else if constexpr (std::is_same_v<T, OscillatorSystem>) {
          j["system"] = "oscillator";
          j["params"] = oscillator_json(s);
        } else {
          j["system"] = "quantum";
          j["params"] = quantum_json(s);
        }
      },
      spec.system);
  return j;
}

}  // namespace metasym::datagen
