#include "metasym/rollout/rollout.hpp"

#include <cmath>

#include "metasym/error.hpp"
#include "metasym/log.hpp"

namespace metasym::rollout {
namespace {

bool finite(const State& x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

State encode(const Model& model, const State& x, double dt) {
  return symp::stack_forward(symp::PhasePoint::from_flat(x, dt), model.encoder).flat();
}

State predict_next(const Model& model, const RolloutState& st, const std::vector<State>& controls, double dt) {
  if (!model.use_decoder) return st.latents.back();
  const std::vector<State> states(st.window.begin(), st.window.end());
  const std::vector<State> latents(st.latents.begin(), st.latents.end());
  std::vector<State> window_controls;
  if (model.decoder.m > 0) {
    // The window covers timeline indices [step, step + c).
    for (std::size_t i = 0; i < st.window.size(); ++i) window_controls.push_back(controls[st.step + i]);
  }
  const decoder::Batch b = decoder::make_window(states, window_controls, latents, dt, model.decoder.hidden);
  const ad::Tensor y = decoder::predict(model.decoder, model.zeta, b);
  const std::size_t last = y.rows() - 1;
  State out(y.cols());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = y.at(last, k);
  return out;
}

}  // namespace

RolloutResult rollout(const Model& model, const std::vector<State>& seed_window, const std::vector<State>& controls,
                      double dt, std::size_t horizon) {
  RolloutResult result;
  if (horizon == 0) return result;
  const std::size_t c = model.context();
  if (seed_window.size() != c) {
    throw ShapeError("rollout needs a seed window of " + std::to_string(c) + " states, got " +
                     std::to_string(seed_window.size()));
  }
  const std::size_t n = 2 * model.encoder.d;
  for (const auto& x : seed_window)
    if (x.size() != n) throw ShapeError("seed state width does not match the encoder dimension");
  if (model.use_decoder && model.decoder.m > 0) {
    if (controls.size() < c + horizon - 1) throw ShapeError("rollout controls do not cover the horizon");
    for (const auto& u : controls)
      if (u.size() != model.decoder.m) throw ShapeError("control width does not match the decoder");
  }

  RolloutState st;
  st.horizon = horizon;
  for (const auto& x : seed_window) {
    st.window.push_back(x);
    st.latents.push_back(encode(model, x, dt));
  }
  result.states.reserve(horizon);
  for (; st.step < horizon; ++st.step) {
    State next;
    try {
      next = predict_next(model, st, controls, dt);
    } catch (const NonFiniteError& e) {
      result.halted = true;
      result.message = e.what();
    }
    if (!result.halted && !finite(next)) {
      result.halted = true;
      result.message = "non-finite prediction";
    }
    if (result.halted) {
      result.message += " at rollout step " + std::to_string(st.step);
      log::warn(result.message);
      break;
    }
    result.states.push_back(next);
    st.window.pop_front();
    st.latents.pop_front();
    st.latents.push_back(encode(model, next, dt));
    st.window.push_back(std::move(next));
  }
  return result;
}

std::vector<State> segment(const datagen::Trajectory& traj, std::size_t begin, std::size_t count) {
  if (begin + count > traj.steps()) throw ShapeError("segment exceeds trajectory '" + traj.system_id + "'");
  std::vector<State> out;
  out.reserve(count);
  for (std::size_t t = begin; t < begin + count; ++t) out.push_back(traj.state(t));
  return out;
}

RolloutResult rollout_from(const Model& model, const datagen::Trajectory& truth, std::size_t start,
                           std::size_t horizon) {
  const std::size_t c = model.context();
  const std::vector<State> seed = segment(truth, start, c);
  std::vector<State> controls;
  if (truth.m > 0) {
    const std::size_t count = c + (horizon ? horizon - 1 : 0);
    if (start + count > truth.steps()) throw ShapeError("controls of '" + truth.system_id + "' do not cover the horizon");
    for (std::size_t t = start; t < start + count; ++t) controls.push_back(truth.control(t));
  }
  return rollout(model, seed, controls, truth.dt, horizon);
}

std::vector<State> persistence(const State& last, std::size_t horizon) { return std::vector<State>(horizon, last); }

RolloutMetrics evaluate_rollout(const std::vector<State>& predicted, const std::vector<State>& truth) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("rollout length " + std::to_string(predicted.size()) + " does not match truth length " +
                     std::to_string(truth.size()));
  }
  RolloutMetrics m;
  if (predicted.empty()) return m;
  const std::size_t n = truth.front().size();
  m.per_coordinate.assign(n, 0.0);
  double total = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (predicted[t].size() != n || truth[t].size() != n) throw ShapeError("rollout state widths differ");
    double step = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double e = (predicted[t][k] - truth[t][k]) * (predicted[t][k] - truth[t][k]);
      m.per_coordinate[k] += e;
      step += e;
    }
    total += step;
    m.per_step.push_back(step / static_cast<double>(n));
  }
  for (double& v : m.per_coordinate) v /= static_cast<double>(truth.size());
  m.mse = total / static_cast<double>(truth.size() * n);
  return m;
}

}  // namespace metasym::rollout
