#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "metasym/autodiff/tensor.hpp"

namespace testing {

inline metasym::ad::Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(r * c);
  for (double& x : v) x = n(rng);
  return metasym::ad::Tensor::matrix(r, c, std::move(v));
}

// Central differences of a scalar function of one tensor.
inline metasym::ad::Tensor finite_difference(const std::function<double(const metasym::ad::Tensor&)>& f,
                                             const metasym::ad::Tensor& x, double h = 1e-5) {
  metasym::ad::Tensor g = metasym::ad::Tensor::zeros_like(x);
  metasym::ad::Tensor xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = xp[i];
    xp[i] = x0 + h;
    const double fp = f(xp);
    xp[i] = x0 - h;
    const double fm = f(xp);
    xp[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double max_abs_diff(const metasym::ad::Tensor& a, const metasym::ad::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testing
