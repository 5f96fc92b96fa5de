#include "metasym/sympnet/sympnet.hpp"

#include <cmath>
#include <cstdio>

#include "metasym/error.hpp"
#include "metasym/log.hpp"

namespace metasym::symp {
namespace {

double activate(Nonlinearity act, double v) { return act == Nonlinearity::tanh ? std::tanh(v) : 1.0 / (1.0 + std::exp(-v)); }

double activate_prime(Nonlinearity act, double v) {
  if (act == Nonlinearity::tanh) {
    const double t = std::tanh(v);
    return 1.0 - t * t;
  }
  const double s = 1.0 / (1.0 + std::exp(-v));
  return s * (1.0 - s);
}

void check_dim(const PhasePoint& x, const SympStack& stack) {
  if (x.q.size() != stack.d || x.p.size() != stack.d) {
    throw ShapeError("phase point of dimension " + std::to_string(x.q.size()) + "/" + std::to_string(x.p.size()) +
                     " applied to a stack of dimension " + std::to_string(stack.d));
  }
}

// Shear increment f(v) for one layer, before multiplication by dt. Evaluated in
// the same order as the graph version: v T, then v T^T, then bias.
std::vector<double> increment(const SympStack& stack, std::size_t layer, const std::vector<double>& v) {
  const std::size_t d = stack.d;
  const LayerSpec& spec = stack.layers[layer];
  std::vector<double> out(d, 0.0);
  if (spec.fn == FnKind::linear) {
    const ad::Tensor& w = stack.params.get(param_name(layer, "weight"));
    const ad::Tensor& b = stack.params.get(param_name(layer, "bias"));
    const ad::Tensor mask = triangle_mask(d);
    std::vector<double> left(d, 0.0), right(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      for (std::size_t j = 0; j < d; ++j) {
        left[k] += v[j] * (w.at(j, k) * mask.at(j, k));
      }
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += v[j] * (w.at(k, j) * mask.at(k, j));
      right[k] = acc;
    }
    for (std::size_t k = 0; k < d; ++k) out[k] = (left[k] + right[k]) + b[k];
  } else {
    const ad::Tensor& a = stack.params.get(param_name(layer, "scale"));
    for (std::size_t k = 0; k < d; ++k) out[k] = activate(spec.act, v[k]) * a[k];
  }
  return out;
}

PhasePoint apply(const PhasePoint& x, const SympStack& stack, std::size_t layer, double dt) {
  check_dim(x, stack);
  if (layer >= stack.depth()) throw ShapeError("layer index out of range");
  PhasePoint y = x;
  if (stack.layers[layer].kind == Kind::up) {
    const auto f = increment(stack, layer, x.p);
    for (std::size_t k = 0; k < stack.d; ++k) y.q[k] = x.q[k] + f[k] * dt;
  } else {
    const auto f = increment(stack, layer, x.q);
    for (std::size_t k = 0; k < stack.d; ++k) y.p[k] = x.p[k] + f[k] * dt;
  }
  return y;
}

}  // namespace

std::vector<double> PhasePoint::flat() const {
  std::vector<double> x = q;
  x.insert(x.end(), p.begin(), p.end());
  return x;
}

PhasePoint PhasePoint::from_flat(const std::vector<double>& x, double dt) {
  if (x.size() % 2 != 0) throw ShapeError("flat phase vector must have even length");
  const std::size_t d = x.size() / 2;
  return PhasePoint{{x.begin(), x.begin() + static_cast<std::ptrdiff_t>(d)},
                    {x.begin() + static_cast<std::ptrdiff_t>(d), x.end()}, dt};
}

std::string to_string(Kind k) { return k == Kind::up ? "up" : "low"; }
std::string to_string(FnKind k) { return k == FnKind::linear ? "linear" : "activation"; }
std::string to_string(Nonlinearity k) { return k == Nonlinearity::tanh ? "tanh" : "sigmoid"; }

Kind parse_kind(const std::string& s) {
  if (s == "up") return Kind::up;
  if (s == "low") return Kind::low;
  throw Error("unknown shear kind '" + s + "'");
}

FnKind parse_fn_kind(const std::string& s) {
  if (s == "linear") return FnKind::linear;
  if (s == "activation") return FnKind::activation;
  throw Error("unknown shear function '" + s + "'");
}

Nonlinearity parse_nonlinearity(const std::string& s) {
  if (s == "tanh") return Nonlinearity::tanh;
  if (s == "sigmoid") return Nonlinearity::sigmoid;
  throw Error("unknown nonlinearity '" + s + "'");
}

std::string param_name(std::size_t layer, const char* field) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "L%02zu.", layer);
  return std::string(buf) + field;
}

std::vector<LayerSpec> la_pattern(std::size_t blocks, Nonlinearity act) {
  std::vector<LayerSpec> out;
  for (std::size_t b = 0; b < blocks; ++b) {
    out.push_back({Kind::up, FnKind::linear, act});
    out.push_back({Kind::low, FnKind::linear, act});
    out.push_back({Kind::up, FnKind::activation, act});
    out.push_back({Kind::low, FnKind::activation, act});
  }
  return out;
}

SympStack make_zero_stack(std::size_t d, const std::vector<LayerSpec>& layers) {
  if (d == 0) throw ShapeError("stack dimension must be positive");
  SympStack s;
  s.d = d;
  s.layers = layers;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].fn == FnKind::linear) {
      s.params.set(param_name(k, "weight"), ad::Tensor::zeros(d, d));
      s.params.set(param_name(k, "bias"), ad::Tensor::zeros(1, d));
    } else {
      s.params.set(param_name(k, "scale"), ad::Tensor::zeros(1, d));
    }
  }
  if (layers.empty()) log::warn("empty symplectic stack: identity map");
  return s;
}

SympStack make_stack(std::size_t d, const std::vector<LayerSpec>& layers, std::mt19937_64& rng) {
  SympStack s = make_zero_stack(d, layers);
  std::normal_distribution<double> normal(0.0, std::sqrt(0.01 / static_cast<double>(d)));
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].fn == FnKind::linear) {
      ad::Tensor& w = s.params.get(param_name(k, "weight"));
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) w.at(i, j) = normal(rng);
    } else {
      s.params.set(param_name(k, "scale"), ad::Tensor::filled(1, d, 0.1));
    }
  }
  return s;
}

ad::Tensor triangle_mask(std::size_t d) {
  ad::Tensor m = ad::Tensor::zeros(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    m.at(i, i) = 0.5;
    for (std::size_t j = i + 1; j < d; ++j) m.at(i, j) = 1.0;
  }
  return m;
}

Eigen::MatrixXd SympStack::symmetric_weight(std::size_t layer) const {
  if (layers.at(layer).fn != FnKind::linear) throw Error("symmetric_weight on an activation layer");
  const ad::Tensor& w = params.get(param_name(layer, "weight"));
  const ad::Tensor mask = triangle_mask(d);
  Eigen::MatrixXd t(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) t(i, j) = w.at(i, j) * mask.at(i, j);
  return t + t.transpose();
}

PhasePoint shear_forward(const PhasePoint& x, const SympStack& stack, std::size_t layer) {
  return apply(x, stack, layer, x.dt);
}

PhasePoint shear_inverse(const PhasePoint& x, const SympStack& stack, std::size_t layer) {
  return apply(x, stack, layer, -x.dt);
}

PhasePoint stack_forward(const PhasePoint& x, const SympStack& stack) {
  check_dim(x, stack);
  PhasePoint y = x;
  for (std::size_t k = 0; k < stack.depth(); ++k) y = shear_forward(y, stack, k);
  return y;
}

PhasePoint stack_inverse(const PhasePoint& x, const SympStack& stack) {
  check_dim(x, stack);
  PhasePoint y = x;
  for (std::size_t k = stack.depth(); k-- > 0;) y = shear_inverse(y, stack, k);
  return y;
}

Eigen::MatrixXd analytic_jacobian(const PhasePoint& x, const SympStack& stack) {
  check_dim(x, stack);
  const auto d = static_cast<Eigen::Index>(stack.d);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(2 * d, 2 * d);
  PhasePoint y = x;
  for (std::size_t k = 0; k < stack.depth(); ++k) {
    const LayerSpec& spec = stack.layers[k];
    const std::vector<double>& v = spec.kind == Kind::up ? y.p : y.q;
    Eigen::MatrixXd block(d, d);
    if (spec.fn == FnKind::linear) {
      block = stack.symmetric_weight(k);
    } else {
      const ad::Tensor& a = stack.params.get(param_name(k, "scale"));
      block.setZero();
      for (Eigen::Index i = 0; i < d; ++i) block(i, i) = a[i] * activate_prime(spec.act, v[i]);
    }
    Eigen::MatrixXd layer_jac = Eigen::MatrixXd::Identity(2 * d, 2 * d);
    if (spec.kind == Kind::up) {
      layer_jac.topRightCorner(d, d) = x.dt * block;
    } else {
      layer_jac.bottomLeftCorner(d, d) = x.dt * block;
    }
    jac = layer_jac * jac;
    y = shear_forward(y, stack, k);
  }
  return jac;
}

Eigen::MatrixXd canonical_form(std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  omega.topRightCorner(n, n) = Eigen::MatrixXd::Identity(n, n);
  omega.bottomLeftCorner(n, n) = -Eigen::MatrixXd::Identity(n, n);
  return omega;
}

double symplectic_defect(const Eigen::MatrixXd& jacobian) {
  if (jacobian.rows() != jacobian.cols() || jacobian.rows() % 2 != 0) {
    throw ShapeError("symplectic defect needs a square even-dimensional Jacobian");
  }
  const Eigen::MatrixXd omega = canonical_form(static_cast<std::size_t>(jacobian.rows() / 2));
  const Eigen::MatrixXd r = jacobian.transpose() * omega * jacobian - omega;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
  return svd.singularValues()(0);
}

DropMasks sample_dropconnect(const SympStack& stack, double rate, std::mt19937_64& rng) {
  DropMasks masks;
  if (rate <= 0.0) return masks;
  if (rate >= 1.0) throw Error("DropConnect rate must be below 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  for (std::size_t k = 0; k < stack.depth(); ++k) {
    if (stack.layers[k].fn != FnKind::linear) continue;
    ad::Tensor m = ad::Tensor::zeros(stack.d, stack.d);
    for (double& v : m.data()) v = keep(rng) ? s : 0.0;
    masks.emplace(param_name(k, "weight"), std::move(m));
  }
  return masks;
}

std::pair<ad::Var, ad::Var> forward_graph(ad::Var q, ad::Var p, double dt, const SympStack& stack,
                                          const ad::BoundParams& params, bool inverse, const DropMasks* masks) {
  if (q.value().cols() != stack.d || p.value().cols() != stack.d || q.value().rows() != p.value().rows()) {
    throw ShapeError("forward_graph: expected N x " + std::to_string(stack.d) + " inputs, got " +
                     q.value().shape_string() + " and " + p.value().shape_string());
  }
  ad::Graph& g = *q.graph;
  const ad::Var mask = g.constant(triangle_mask(stack.d));
  const double step = inverse ? -dt : dt;
  const std::size_t n = stack.depth();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = inverse ? n - 1 - i : i;
    const LayerSpec& spec = stack.layers[k];
    const ad::Var v = spec.kind == Kind::up ? p : q;
    ad::Var f;
    if (spec.fn == FnKind::linear) {
      const std::string wname = param_name(k, "weight");
      ad::Var t = ad::mul(params[wname], mask);
      if (masks != nullptr) {
        auto it = masks->find(wname);
        if (it != masks->end()) t = ad::mul(t, g.constant(it->second));
      }
      f = ad::add(ad::add(ad::matmul(v, t), ad::matmul(v, t, false, true)), params[param_name(k, "bias")]);
    } else {
      ad::Var s = spec.act == Nonlinearity::tanh ? ad::tanh(v) : ad::sigmoid(v);
      f = ad::mul(s, params[param_name(k, "scale")]);
    }
    f = ad::scale(f, step);
    if (spec.kind == Kind::up) {
      q = ad::add(q, f);
    } else {
      p = ad::add(p, f);
    }
  }
  return {q, p};
}

}  // namespace metasym::symp
