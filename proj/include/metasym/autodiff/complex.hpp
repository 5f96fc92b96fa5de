#pragma once

#include <complex>

#include <Eigen/Dense>

namespace metasym::ad {

// Dense complex matrices for density operators and Fock-space operators.
using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;

inline ComplexMatrix dagger(const ComplexMatrix& a) { return a.adjoint(); }

inline bool is_hermitian(const ComplexMatrix& a, double tol = 1e-12) {
  return a.rows() == a.cols() && (a - a.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

inline ComplexMatrix hermitize(const ComplexMatrix& a) { return 0.5 * (a + a.adjoint()); }

}  // namespace metasym::ad
