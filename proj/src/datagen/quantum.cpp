#include <cmath>
#include <map>
#include <random>

#include <Eigen/Eigenvalues>

#include "metasym/autodiff/complex.hpp"
#include "metasym/datagen/datagen.hpp"
#include "metasym/error.hpp"
#include "metasym/log.hpp"

namespace metasym::datagen {
namespace {

using ad::Complex;
using ad::ComplexMatrix;

const Complex kI{0.0, 1.0};

struct Operators {
  ComplexMatrix a;
  ComplexMatrix unitary;  // exp(-i H dt_sub)
  // No-jump Kraus operator I - dt/2 sum L^dag L over every dissipator.
  ComplexMatrix k0;
  // Heterodyne channels c_x = m / sqrt 2 and c_y = -i m / sqrt 2 with m = sqrt(gamma) a,
  // so that D[c_x] + D[c_y] = gamma D[a].
  ComplexMatrix cx, cy;
  // Dissipators that are never monitored (thermal part).
  std::vector<ComplexMatrix> unmonitored;
  // Second-order products for the measurement operator.
  ComplexMatrix cxx, cyy, cxy;
  // sum K^dag K of the first-order set before normalization.
  ComplexMatrix completeness;
};

ComplexMatrix annihilation(std::size_t n) {
  ComplexMatrix a = ComplexMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t k = 1; k < n; ++k) a(static_cast<Eigen::Index>(k - 1), static_cast<Eigen::Index>(k)) = std::sqrt(static_cast<double>(k));
  return a;
}

Operators build_operators(const QuantumSystem& sys, double dt_sub) {
  Operators ops;
  ops.a = annihilation(sys.fock_dim);
  const ComplexMatrix& a = ops.a;
  const ComplexMatrix ad = a.adjoint();
  const ComplexMatrix a2 = a * a, ad2 = ad * ad;
  ComplexMatrix h = sys.omega * ad * a + (kI * sys.chi / 2.0) * (ad2 - a2) + sys.beta * (a2 * a + ad2 * ad);
  h = ad::hermitize(h);
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> eig(h);
  const Eigen::VectorXd& lam = eig.eigenvalues();
  Eigen::VectorXcd phase(lam.size());
  for (Eigen::Index k = 0; k < lam.size(); ++k) phase(k) = std::exp(-kI * lam(k) * dt_sub);
  ops.unitary = eig.eigenvectors() * phase.asDiagonal() * eig.eigenvectors().adjoint();

  // Decay at rate gamma (nth + 1) splits into the monitored channel gamma D[a]
  // and an unmonitored remainder gamma nth D[a]; excitation gamma nth D[a^dag].
  const ComplexMatrix m = std::sqrt(sys.gamma) * a;
  ops.cx = m / std::sqrt(2.0);
  ops.cy = -kI * m / std::sqrt(2.0);
  if (sys.gamma * sys.nth > 0.0) {
    ops.unmonitored.push_back(std::sqrt(sys.gamma * sys.nth) * a);
    ops.unmonitored.push_back(std::sqrt(sys.gamma * sys.nth) * ad);
  }
  ops.k0 = ComplexMatrix::Identity(a.rows(), a.cols()) - 0.5 * dt_sub * (m.adjoint() * m);
  for (const auto& l : ops.unmonitored) ops.k0 -= 0.5 * dt_sub * l.adjoint() * l;
  // The first-order set has sum K^dag K = S = I + O(dt^2). Right-multiplying
  // every operator by S^{-1/2} makes the unconditioned map trace preserving;
  // without it the O(dt^2) excess at high Fock levels is amplified by each
  // renormalization and pumps population to the truncation edge.
  ComplexMatrix total = ops.k0.adjoint() * ops.k0 + dt_sub * (m.adjoint() * m);
  for (const auto& l : ops.unmonitored) total += dt_sub * l.adjoint() * l;
  ops.completeness = ad::hermitize(total);
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> se(ops.completeness);
  const ComplexMatrix inv_sqrt =
      se.eigenvectors() * se.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() * se.eigenvectors().adjoint();
  ops.k0 = ops.k0 * inv_sqrt;
  ops.cx = ops.cx * inv_sqrt;
  ops.cy = ops.cy * inv_sqrt;
  for (auto& l : ops.unmonitored) l = l * inv_sqrt;
  ops.cxx = ops.cx * ops.cx;
  ops.cyy = ops.cy * ops.cy;
  ops.cxy = ops.cx * ops.cy + ops.cy * ops.cx;
  return ops;
}

ComplexMatrix initial_state(const QuantumSystem& sys) {
  const auto n = static_cast<Eigen::Index>(sys.fock_dim);
  Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(n);
  if (sys.initial_fock >= 0) {
    if (sys.initial_fock >= n) throw Error("initial Fock level exceeds the Fock dimension");
    psi(sys.initial_fock) = 1.0;
  } else {
    // Coherent state truncated to N levels and renormalized.
    Complex c = 1.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k > 0) c *= sys.alpha0 / std::sqrt(static_cast<double>(k));
      psi(k) = c;
    }
    psi /= psi.norm();
  }
  return psi * psi.adjoint();
}

// tr(x y) without forming the product.
Complex trace_product(const ComplexMatrix& x, const ComplexMatrix& y) { return x.transpose().cwiseProduct(y).sum(); }

struct Run {
  std::vector<double> x, p;
  QuantumDiagnostics diag;
};

// One substep of the conditioned state in Kraus form:
//   rho~ = M rho M^dag + (1 - eta) dt sum_j c_j rho c_j^dag + dt sum_l L_l rho L_l^dag
//   M = K0 + sqrt(eta) sum_j c_j dy_j [+ eta/2 sum_jk c_j c_k (dy_j dy_k - delta_jk dt)]
// with dy_j = sqrt(eta) tr((c_j + c_j^dag) rho) dt + dV_j, dV_j ~ N(0, dt). To
// first order this is the Euler-Maruyama step of the SME, and rho~ is positive
// semidefinite by construction. The bracket is the second-order correction.
Run integrate(const QuantumSystem& sys, std::uint64_t seed, bool measured) {
  if (sys.fock_dim < 3) throw Error("Fock dimension must be at least 3");
  if (sys.eta < 0.0 || sys.eta > 1.0) throw Error("measurement efficiency must lie in [0, 1]");
  if (sys.gamma < 0.0 || sys.nth < 0.0 || !(sys.dt > 0.0)) throw Error("quantum system parameters out of range");
  const double eta = measured ? sys.eta : 0.0;
  const double root_eta = std::sqrt(eta);
  const double record_gain = std::sqrt(2.0 * sys.eta);
  const auto n = static_cast<Eigen::Index>(sys.fock_dim);
  // Operators depend on dt_sub only; one set per substep count in use.
  std::map<std::size_t, Operators> cache;
  auto operators = [&](std::size_t nsub) -> const Operators& {
    auto it = cache.find(nsub);
    if (it == cache.end()) it = cache.emplace(nsub, build_operators(sys, sys.dt / static_cast<double>(nsub))).first;
    return it->second;
  };
  // R = sum L^dag L is diagonal: gamma ((2 nth + 1) k + nth) on level k.
  auto decay_moment = [&](const ComplexMatrix& r) {
    double m2 = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double rate = sys.gamma * ((2.0 * sys.nth + 1.0) * static_cast<double>(k) + sys.nth);
      m2 += rate * rate * r(k, k).real();
    }
    return m2;
  };
  const ComplexMatrix a = annihilation(sys.fock_dim);
  const ComplexMatrix number = a.adjoint() * a;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  ComplexMatrix rho = initial_state(sys);

  Run run;
  auto observe = [&]() {
    const Complex amp = trace_product(a, rho);
    run.diag.amplitude.push_back(amp);
    run.diag.photon_number.push_back(trace_product(number, rho).real());
    const double top = rho(n - 1, n - 1).real() + rho(n - 2, n - 2).real();
    run.diag.max_top_population = std::max(run.diag.max_top_population, top);
    // No point integrating further once the basis is known to be too small.
    if (top >= 1e-3) throw TruncationError("top-level population " + std::to_string(top));
    const double lmin = Eigen::SelfAdjointEigenSolver<ComplexMatrix>(rho, Eigen::EigenvaluesOnly).eigenvalues()(0);
    run.diag.min_eigenvalue = std::min(run.diag.min_eigenvalue, lmin);
    if (lmin < -1e-6) ++run.diag.negativity_flags;
  };
  auto sandwich = [](const ComplexMatrix& k, const ComplexMatrix& r) -> ComplexMatrix { return k * r * k.adjoint(); };
  observe();
  for (std::size_t step = 0; step < sys.steps; ++step) {
    double xrec = 0.0, prec = 0.0;
    const std::size_t nsub = quantum_substeps(sys, decay_moment(rho));
    run.diag.max_substeps = std::max(run.diag.max_substeps, nsub);
    const Operators& ops = operators(nsub);
    const double dt_sub = sys.dt / static_cast<double>(nsub);
    const double dw_scale = std::sqrt(dt_sub / 2.0);
    for (std::size_t s = 0; s < nsub; ++s) {
      const Complex amp = trace_product(ops.a, rho);
      rho = sandwich(ops.unitary, rho);
      // Trace of the first-order unconditioned map before normalization.
      const double dev = std::abs(trace_product(ops.completeness, rho).real() - 1.0);
      run.diag.max_trace_deviation = std::max(run.diag.max_trace_deviation, dev);
      if (dev > 1e-3) ++run.diag.trace_flags;

      // c_y = -i c_x, so both channels contribute the same jump term.
      const ComplexMatrix jumps = (2.0 * dt_sub) * sandwich(ops.cx, rho);
      ComplexMatrix others = ComplexMatrix::Zero(n, n);
      for (const auto& l : ops.unmonitored) others += dt_sub * sandwich(l, rho);
      const double dwx = measured ? dw_scale * unit(rng) : 0.0, dwy = measured ? dw_scale * unit(rng) : 0.0;
      ComplexMatrix next;
      if (eta > 0.0) {
        const double dyx = root_eta * 2.0 * trace_product(ops.cx, rho).real() * dt_sub + std::sqrt(2.0) * dwx;
        const double dyy = root_eta * 2.0 * trace_product(ops.cy, rho).real() * dt_sub + std::sqrt(2.0) * dwy;
        ComplexMatrix mk = ops.k0 + root_eta * (ops.cx * dyx + ops.cy * dyy);
        if (sys.scheme == SmeScheme::milstein) {
          mk += 0.5 * eta *
                (ops.cxx * (dyx * dyx - dt_sub) + ops.cyy * (dyy * dyy - dt_sub) + ops.cxy * (dyx * dyy));
        }
        next = sandwich(mk, rho) + (1.0 - eta) * jumps + others;
      } else {
        next = sandwich(ops.k0, rho) + jumps + others;
      }
      if (measured) {
        xrec += record_gain * amp.real() * dt_sub + dwx;
        prec += record_gain * amp.imag() * dt_sub + dwy;
      }
      const double tr = next.trace().real();
      if (!std::isfinite(tr) || tr <= 0.0) throw SimulationError("density matrix trace collapsed");
      rho = ad::hermitize(next / tr);
    }
    run.x.push_back(xrec);
    run.p.push_back(prec);
    observe();
  }
  return run;
}

}  // namespace

nlohmann::json quantum_json(const QuantumSystem& s) {
  return {{"fock_dim", s.fock_dim}, {"omega", s.omega},       {"chi", s.chi},
          {"beta", s.beta},         {"gamma", s.gamma},       {"nth", s.nth},
          {"eta", s.eta},           {"dt", s.dt},             {"steps", s.steps},
          {"alpha0_re", s.alpha0.real()}, {"alpha0_im", s.alpha0.imag()}, {"initial_fock", s.initial_fock},
          {"substeps", s.substeps}};
}

std::size_t quantum_substeps(const QuantumSystem& sys, double decay_moment) {
  if (sys.substeps > 0) return sys.substeps;
  // The trace defect before renormalization is (dt_sub / 2)^2 tr(R^2 rho) with
  // R = sum L^dag L. Aim for 1.5e-4 at the start of the record step, well
  // below the flag threshold to absorb growth within the step.
  double limit = 0.01;
  if (decay_moment > 0.0) limit = std::min(limit, 2.0 * std::sqrt(1.5e-4 / decay_moment));
  return static_cast<std::size_t>(std::ceil(sys.dt / limit - 1e-9));
}

Trajectory gen_quantum_sme(const QuantumSystem& sys, std::uint64_t seed, const std::string& id,
                           QuantumDiagnostics* diagnostics) {
  Run run;
  try {
    run = integrate(sys, seed, true);
  } catch (const TruncationError& e) {
    throw TruncationError("Fock space N = " + std::to_string(sys.fock_dim) + " too small for '" + id + "': " + e.what());
  }
  if (run.diag.trace_flags > 0) {
    log::warn("quantum '" + id + "': trace deviation " + std::to_string(run.diag.max_trace_deviation) +
              " before renormalization; dt too large");
  }
  if (run.diag.negativity_flags > 0) {
    log::warn("quantum '" + id + "': negative eigenvalue " + std::to_string(run.diag.min_eigenvalue));
  }
  Trajectory tr;
  tr.system_id = id;
  tr.generator = "quantum_sme";
  tr.d = 1;
  tr.m = 0;
  tr.dt = sys.dt;
  tr.seed = seed;
  tr.params = quantum_json(sys);
  for (std::size_t k = 0; k < run.x.size(); ++k) tr.push({run.x[k]}, {run.p[k]});
  if (diagnostics != nullptr) *diagnostics = std::move(run.diag);
  return tr;
}

std::vector<double> quantum_master_photon_number(const QuantumSystem& sys) {
  return integrate(sys, 0, false).diag.photon_number;
}

}  // namespace metasym::datagen
