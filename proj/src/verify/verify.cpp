#include "metasym/verify/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "metasym/autodiff/adam.hpp"
#include "metasym/decoder/decoder.hpp"
#include "metasym/error.hpp"

namespace metasym::verify {
namespace {

double spectral_norm(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

void check_finite(const Eigen::MatrixXd& j) {
  if (!j.allFinite()) throw NonFiniteError("non-finite Jacobian");
}

ad::Tensor mlp_inputs(const datagen::Trajectory& traj, std::size_t begin, std::size_t end) {
  const std::size_t n = 2 * traj.d, in = n + traj.m + 1;
  ad::Tensor x = ad::Tensor::zeros(end - begin, in);
  for (std::size_t t = begin; t < end; ++t) {
    const auto s = traj.state(t);
    const auto u = traj.control(t);
    for (std::size_t k = 0; k < n; ++k) x.at(t - begin, k) = s[k];
    x.at(t - begin, n) = traj.dt;
    for (std::size_t k = 0; k < traj.m; ++k) x.at(t - begin, n + 1 + k) = u[k];
  }
  return x;
}

ad::Tensor mlp_targets(const datagen::Trajectory& traj, std::size_t begin, std::size_t end) {
  const std::size_t n = 2 * traj.d;
  ad::Tensor y = ad::Tensor::zeros(end - begin, n);
  for (std::size_t t = begin; t < end; ++t) {
    const auto s = traj.state(t + 1);
    for (std::size_t k = 0; k < n; ++k) y.at(t - begin, k) = s[k];
  }
  return y;
}

ad::Var mlp_forward(ad::Graph& g, const MlpModel& model, const ad::BoundParams& p, const ad::Tensor& inputs) {
  const ad::Var x = g.constant(inputs);
  const ad::Var h1 = ad::tanh(ad::add(ad::matmul(x, p["l1.W"]), p["l1.b"]));
  const ad::Var h2 = ad::tanh(ad::add(ad::matmul(h1, p["l2.W"]), p["l2.b"]));
  // Same rate parametrization as the decoder head: x + dt * f.
  const double dt = inputs.at(0, 2 * model.d);
  const ad::Var f = ad::scale(ad::add(ad::matmul(h2, p["out.W"]), p["out.b"]), dt);
  return ad::add(ad::slice_cols(x, 0, 2 * model.d), f);
}

ad::Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  ad::Tensor t = ad::Tensor::zeros(rows, cols);
  for (auto& v : t.storage()) v = n(rng);
  return t;
}

}  // namespace

Eigen::MatrixXd fd_jacobian(const Map& map, const State& x, double h) {
  const State f0 = map(x);
  Eigen::MatrixXd j(static_cast<Eigen::Index>(f0.size()), static_cast<Eigen::Index>(x.size()));
  State xp = x, xm = x;
  for (std::size_t c = 0; c < x.size(); ++c) {
    xp[c] = x[c] + h;
    xm[c] = x[c] - h;
    const State fp = map(xp), fm = map(xm);
    for (std::size_t r = 0; r < f0.size(); ++r)
      j(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = (fp[r] - fm[r]) / (2.0 * h);
    xp[c] = xm[c] = x[c];
  }
  check_finite(j);
  return j;
}

SymplecticReport symplectic_report(const Map& map, const std::vector<State>& points, JacobianMode mode,
                                   const JacobianFn& analytic) {
  if (mode == JacobianMode::analytic && !analytic) throw Error("analytic mode needs a Jacobian function");
  SymplecticReport r;
  for (const auto& x : points) {
    const Eigen::MatrixXd j = mode == JacobianMode::analytic ? analytic(x) : fd_jacobian(map, x);
    check_finite(j);
    if (j.rows() != j.cols() || j.rows() % 2 != 0) throw ShapeError("symplectic check needs a square 2d x 2d Jacobian");
    r.defect = std::max(r.defect, symp::symplectic_defect(j));
    r.det_dev = std::max(r.det_dev, std::abs(j.determinant() - 1.0));
    ++r.points;
  }
  return r;
}

SymplecticReport encoder_report(const symp::SympStack& stack, const std::vector<State>& points, double dt,
                                JacobianMode mode) {
  const Map map = [&](const State& x) {
    return symp::stack_forward(symp::PhasePoint::from_flat(x, dt), stack).flat();
  };
  const JacobianFn jac = [&](const State& x) {
    return symp::analytic_jacobian(symp::PhasePoint::from_flat(x, dt), stack);
  };
  return symplectic_report(map, points, mode, jac);
}

Map composed_map(const rollout::Model& model, double dt, const State& u) {
  return [model, dt, u](const State& x) {
    const State z = symp::stack_forward(symp::PhasePoint::from_flat(x, dt), model.encoder).flat();
    if (!model.use_decoder) return z;
    std::vector<State> controls;
    if (model.decoder.m > 0) controls.push_back(u);
    const decoder::Batch b = decoder::make_window({x}, controls, {z}, dt, model.decoder.hidden);
    const ad::Tensor y = decoder::predict(model.decoder, model.zeta, b);
    return State(y.storage().begin(), y.storage().end());
  };
}

Map correction_of_latent(const rollout::Model& model, const State& x, double dt, const State& u) {
  return [model, x, dt, u](const State& z) {
    if (!model.use_decoder) return State(z.size(), 0.0);
    std::vector<State> controls;
    if (model.decoder.m > 0) controls.push_back(u);
    const decoder::Batch b = decoder::make_window({x}, controls, {z}, dt, model.decoder.hidden);
    const ad::Tensor y = decoder::predict(model.decoder, model.zeta, b);
    State f(z.size());
    for (std::size_t k = 0; k < f.size(); ++k) f[k] = y[k] - z[k];
    return f;
  };
}

BoundEstimate perturbation_bound(const rollout::Model& model, const std::vector<State>& samples, double dt,
                                 const State& u) {
  if (samples.empty()) throw Error("perturbation bound needs at least one sample");
  BoundEstimate b;
  const Map psi = composed_map(model, dt, u);
  for (const auto& x : samples) {
    const State z = symp::stack_forward(symp::PhasePoint::from_flat(x, dt), model.encoder).flat();
    const double rho = spectral_norm(fd_jacobian(correction_of_latent(model, x, dt, u), z));
    const double defect = symp::symplectic_defect(fd_jacobian(psi, x));
    b.rho.push_back(rho);
    b.defects.push_back(defect);
    b.rho_hat = std::max(b.rho_hat, rho);
    b.defect = std::max(b.defect, defect);
    if (rho > 0.0) b.c_hat = std::max(b.c_hat, defect / rho);
  }
  return b;
}

std::vector<ScalingPoint> scaling_sweep(const rollout::Model& model, const std::vector<State>& samples, double dt,
                                        const std::vector<double>& scales, const State& u) {
  std::vector<ScalingPoint> out;
  for (double s : scales) {
    rollout::Model scaled = model;
    for (const char* name : {"head.W2", "head.b2"}) {
      ad::Tensor t = scaled.decoder.global.get(name);
      for (double& v : t.data()) v *= s;
      scaled.decoder.global.set(name, t);
    }
    const BoundEstimate b = perturbation_bound(scaled, samples, dt, u);
    out.push_back({s, b.rho_hat, b.defect});
  }
  return out;
}

EnergyDrift energy_drift(const std::vector<double>& energy) {
  if (energy.empty()) throw Error("energy drift needs a non-empty series");
  const double e0 = energy.front();
  if (e0 == 0.0) throw Error("energy drift is relative to E(0), which is zero");
  EnergyDrift r;
  const double n = static_cast<double>(energy.size());
  double mt = 0.0, my = 0.0;
  std::vector<double> rel(energy.size());
  for (std::size_t t = 0; t < energy.size(); ++t) {
    rel[t] = (energy[t] - e0) / std::abs(e0);
    r.max_relative = std::max(r.max_relative, std::abs(rel[t]));
    mt += static_cast<double>(t);
    my += rel[t];
  }
  mt /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t t = 0; t < energy.size(); ++t) {
    sxy += (static_cast<double>(t) - mt) * (rel[t] - my);
    sxx += (static_cast<double>(t) - mt) * (static_cast<double>(t) - mt);
  }
  r.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  return r;
}

double shoelace_area(const std::vector<double>& q, const std::vector<double>& p) {
  if (q.size() != p.size()) throw ShapeError("shoelace needs equally long q and p");
  if (q.size() < 3) throw Error("shoelace needs at least 3 points");
  double acc = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const std::size_t j = (i + 1) % q.size();
    acc += q[i] * p[j] - q[j] * p[i];
  }
  return 0.5 * std::abs(acc);
}

std::size_t mlp_param_count(std::size_t d, std::size_t m, std::size_t hidden) {
  const std::size_t in = 2 * d + m + 1, out = 2 * d;
  return in * hidden + hidden + hidden * hidden + hidden + hidden * out + out;
}

std::size_t mlp_hidden_for_budget(std::size_t d, std::size_t m, std::size_t budget) {
  std::size_t best = 1;
  for (std::size_t h = 1; mlp_param_count(d, m, h) <= 2 * budget + mlp_param_count(d, m, 1); ++h) {
    const auto diff = [&](std::size_t w) {
      const auto c = static_cast<double>(mlp_param_count(d, m, w));
      return std::abs(c - static_cast<double>(budget));
    };
    if (diff(h) < diff(best)) best = h;
  }
  return best;
}

MlpModel make_mlp(std::size_t d, std::size_t m, const MlpConfig& config) {
  if (d == 0 || config.hidden == 0) throw ConfigError("MLP needs d >= 1 and a positive width");
  std::mt19937_64 rng(config.seed);
  MlpModel model{d, m, config.hidden, {}};
  const std::size_t in = 2 * d + m + 1, h = config.hidden;
  model.params.set("l1.W", gaussian(in, h, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  model.params.set("l1.b", ad::Tensor::zeros(1, h));
  model.params.set("l2.W", gaussian(h, h, 1.0 / std::sqrt(static_cast<double>(h)), rng));
  model.params.set("l2.b", ad::Tensor::zeros(1, h));
  model.params.set("out.W", ad::Tensor::zeros(h, 2 * d));
  model.params.set("out.b", ad::Tensor::zeros(1, 2 * d));
  return model;
}

MlpResult train_mlp(const std::vector<const datagen::Trajectory*>& data, const MlpConfig& config) {
  if (data.empty()) throw Error("MLP training needs at least one trajectory");
  const std::size_t d = data.front()->d, m = data.front()->m;
  std::vector<ad::Tensor> inputs, targets;
  for (const auto* t : data) {
    if (t->d != d || t->m != m) throw ShapeError("all MLP training trajectories must share d and m");
    if (t->steps() < 2) throw Error("MLP training trajectory needs at least two steps");
    inputs.push_back(mlp_inputs(*t, 0, t->steps() - 1));
    targets.push_back(mlp_targets(*t, 0, t->steps() - 1));
  }
  MlpResult result{make_mlp(d, m, config), {}};
  std::mt19937_64 rng(config.seed ^ 0x5bd1e995ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  ad::Adam opt({.lr = config.lr, .weight_decay = config.weight_decay});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t i : order) {
      ad::Graph g;
      ad::BoundParams bp(g, result.model.params, ad::all_trainable);
      const ad::Var loss = ad::mean_squared_error(mlp_forward(g, result.model, bp, inputs[i]), g.constant(targets[i]));
      total += loss.value().item();
      opt.step(result.model.params, bp.gradients(g.backward(loss)));
    }
    result.losses.push_back(total / static_cast<double>(data.size()));
  }
  return result;
}

double mlp_mse(const MlpModel& model, const datagen::Trajectory& traj) {
  ad::Graph g;
  ad::BoundParams bp(g, model.params, [](const std::string&) { return false; });
  const ad::Var y = mlp_forward(g, model, bp, mlp_inputs(traj, 0, traj.steps() - 1));
  return ad::mean_squared_error(y, g.constant(mlp_targets(traj, 0, traj.steps() - 1))).value().item();
}

State mlp_step(const MlpModel& model, const State& x, double dt, const State& u) {
  if (x.size() != 2 * model.d || u.size() != model.m) throw ShapeError("MLP step input width mismatch");
  ad::Tensor in = ad::Tensor::zeros(1, 2 * model.d + model.m + 1);
  for (std::size_t k = 0; k < x.size(); ++k) in[k] = x[k];
  in[x.size()] = dt;
  for (std::size_t k = 0; k < u.size(); ++k) in[x.size() + 1 + k] = u[k];
  ad::Graph g;
  ad::BoundParams bp(g, model.params, [](const std::string&) { return false; });
  const ad::Tensor y = mlp_forward(g, model, bp, in).value();
  return State(y.storage().begin(), y.storage().end());
}

std::vector<State> mlp_rollout(const MlpModel& model, const State& start, const std::vector<State>& controls, double dt,
                               std::size_t horizon) {
  if (model.m > 0 && controls.size() < horizon) throw ShapeError("MLP rollout controls do not cover the horizon");
  std::vector<State> out;
  State x = start;
  for (std::size_t k = 0; k < horizon; ++k) {
    bool ok = true;
    try {
      x = mlp_step(model, x, dt, model.m > 0 ? controls[k] : State{});
      for (double v : x) ok = ok && std::isfinite(v);
    } catch (const NonFiniteError&) {
      ok = false;
    }
    if (!ok) {
      out.resize(horizon, State(start.size(), std::numeric_limits<double>::infinity()));
      break;
    }
    out.push_back(x);
  }
  return out;
}

}  // namespace metasym::verify
