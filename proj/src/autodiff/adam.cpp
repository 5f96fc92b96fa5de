#include "metasym/autodiff/adam.hpp"

#include <cmath>

#include "metasym/error.hpp"

namespace metasym::ad {

void Adam::step(ParamTable& params, const ParamTable& grads) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NonFiniteError("non-finite gradient for '" + name + "'");
    if (!params.contains(name)) throw Error("gradient for unknown parameter '" + name + "'");
    if (!params.get(name).same_shape(g)) throw ShapeError("gradient shape mismatch for '" + name + "'");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.get(name);
    if (!m_.contains(name)) {
      m_.set(name, Tensor::zeros_like(g));
      v_.set(name, Tensor::zeros_like(g));
    }
    Tensor& m = m_.get(name);
    Tensor& v = v_.get(name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      if (config_.weight_decay != 0.0) p[i] -= config_.lr * config_.weight_decay * p[i];
      p[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void Adam::reset() {
  m_ = ParamTable();
  v_ = ParamTable();
  t_ = 0;
}

}  // namespace metasym::ad
