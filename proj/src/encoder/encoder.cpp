#include "metasym/encoder/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "metasym/autodiff/adam.hpp"
#include "metasym/error.hpp"
#include "metasym/log.hpp"

namespace metasym::encoder {
namespace {

void check_range(const datagen::Trajectory& traj, std::size_t begin, std::size_t end) {
  if (begin >= end) throw Error("empty transition range for '" + traj.system_id + "'");
  if (end + 1 > traj.steps()) throw ShapeError("transition range exceeds trajectory '" + traj.system_id + "'");
}

symp::SympStack with_params(const symp::SympStack& stack, ad::ParamTable params) {
  symp::SympStack s = stack;
  s.params = std::move(params);
  return s;
}

// Forward MSE over [begin, end) recorded on `g`.
ad::Var forward_mse_graph(ad::Graph& g, const symp::SympStack& stack, const ad::BoundParams& bp,
                          const datagen::Trajectory& traj, std::size_t begin, std::size_t end,
                          const symp::DropMasks* masks) {
  auto [qf, pf] = symp::forward_graph(g.constant(traj.q_rows(begin, end)), g.constant(traj.p_rows(begin, end)),
                                      traj.dt, stack, bp, false, masks);
  ad::Var eq = ad::sub(qf, g.constant(traj.q_rows(begin + 1, end + 1)));
  ad::Var ep = ad::sub(pf, g.constant(traj.p_rows(begin + 1, end + 1)));
  return ad::scale(ad::add(ad::sum(ad::square(eq)), ad::sum(ad::square(ep))),
                   1.0 / static_cast<double>((end - begin) * 2 * traj.d));
}

ad::Var meta_loss_graph(ad::Graph& g, const symp::SympStack& stack, const ad::BoundParams& bp,
                        const datagen::Trajectory& traj, std::size_t begin, std::size_t end,
                        const symp::DropMasks* masks) {
  const ad::Tensor q0 = traj.q_rows(begin, end), p0 = traj.p_rows(begin, end);
  const ad::Tensor q1 = traj.q_rows(begin + 1, end + 1), p1 = traj.p_rows(begin + 1, end + 1);
  ad::Tensor dq = q1, dp = p1;
  for (std::size_t i = 0; i < dq.size(); ++i) {
    dq[i] -= q0[i];
    dp[i] -= p0[i];
  }
  auto [qf, pf] = symp::forward_graph(g.constant(q0), g.constant(p0), traj.dt, stack, bp, false, masks);
  auto [qb, pb] = symp::forward_graph(g.constant(q1), g.constant(p1), traj.dt, stack, bp, true, masks);
  ad::Var rq = ad::sub(ad::sub(qf, qb), g.constant(dq));
  ad::Var rp = ad::sub(ad::sub(pf, pb), g.constant(dp));
  return ad::scale(ad::add(ad::sum(ad::square(rq)), ad::sum(ad::square(rp))), 1.0 / static_cast<double>(end - begin));
}

bool is_trainable(const std::string&) { return true; }

}  // namespace

AdaptMetaSplit make_split(std::size_t steps, double fraction) {
  if (steps < 3) throw Error("trajectory needs at least 3 steps for an adapt/meta split, got " + std::to_string(steps));
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error("adapt fraction must lie in (0, 1)");
  const std::size_t n = steps - 1;
  const auto raw = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  const std::size_t n_adapt = std::clamp<std::size_t>(raw, 1, n - 1);
  return {0, n_adapt, n_adapt, n};
}

EncoderModel make_encoder(std::size_t d, const EncoderConfig& config) {
  std::mt19937_64 rng(config.seed);
  return {symp::make_stack(d, symp::la_pattern(config.blocks, config.activation), rng)};
}

double forward_mse(const symp::SympStack& stack, const datagen::Trajectory& traj, std::size_t begin, std::size_t end) {
  check_range(traj, begin, end);
  double acc = 0.0;
  for (std::size_t t = begin; t < end; ++t) {
    const auto y = symp::stack_forward(traj.point(t), stack).flat();
    const auto target = traj.state(t + 1);
    for (std::size_t k = 0; k < y.size(); ++k) acc += (y[k] - target[k]) * (y[k] - target[k]);
  }
  return acc / static_cast<double>((end - begin) * 2 * traj.d);
}

double meta_loss(const symp::SympStack& stack, const datagen::Trajectory& traj, std::size_t begin, std::size_t end) {
  check_range(traj, begin, end);
  double acc = 0.0;
  for (std::size_t t = begin; t < end; ++t) {
    const auto x0 = traj.state(t), x1 = traj.state(t + 1);
    const auto f = symp::stack_forward(traj.point(t), stack).flat();
    const auto b = symp::stack_inverse(traj.point(t + 1), stack).flat();
    for (std::size_t k = 0; k < f.size(); ++k) {
      const double r = f[k] - b[k] - (x1[k] - x0[k]);
      acc += r * r;
    }
  }
  return acc / static_cast<double>(end - begin);
}

InnerResult inner_adapt(const symp::SympStack& stack, const datagen::Trajectory& traj, const AdaptMetaSplit& split,
                        std::size_t steps, double lr, double dropconnect, std::mt19937_64* rng) {
  check_range(traj, split.adapt_begin, split.adapt_end);
  InnerResult out{stack.params, {}};
  ad::Adam opt({.lr = lr});
  for (std::size_t k = 0; k <= steps; ++k) {
    const bool last = k == steps;
    symp::DropMasks masks;
    if (!last && dropconnect > 0.0 && rng != nullptr) masks = symp::sample_dropconnect(stack, dropconnect, *rng);
    const symp::SympStack current = with_params(stack, out.params);
    ad::Graph g;
    ad::BoundParams bp(g, out.params, is_trainable);
    ad::Var loss = forward_mse_graph(g, current, bp, traj, split.adapt_begin, split.adapt_end,
                                     masks.empty() ? nullptr : &masks);
    out.losses.push_back(loss.value().item());
    if (last) break;
    opt.step(out.params, bp.gradients(g.backward(loss)));
  }
  return out;
}

std::pair<double, ad::ParamTable> meta_loss_gradient(const symp::SympStack& stack, const datagen::Trajectory& traj,
                                                     const AdaptMetaSplit& split, double dropconnect,
                                                     std::mt19937_64* rng) {
  check_range(traj, split.meta_begin, split.meta_end);
  symp::DropMasks masks;
  if (dropconnect > 0.0 && rng != nullptr) masks = symp::sample_dropconnect(stack, dropconnect, *rng);
  ad::Graph g;
  ad::BoundParams bp(g, stack.params, is_trainable);
  ad::Var loss =
      meta_loss_graph(g, stack, bp, traj, split.meta_begin, split.meta_end, masks.empty() ? nullptr : &masks);
  const double value = loss.value().item();
  return {value, bp.gradients(g.backward(loss))};
}

double max_defect(const symp::SympStack& stack, const std::vector<symp::PhasePoint>& points) {
  double worst = 0.0;
  for (const auto& x : points) worst = std::max(worst, symp::symplectic_defect(symp::analytic_jacobian(x, stack)));
  return worst;
}

symp::SympStack adapted_encoder(const symp::SympStack& stack, const datagen::Trajectory& traj, std::size_t steps,
                                double lr, double adapt_fraction) {
  if (steps == 0) return stack;
  const AdaptMetaSplit split = make_split(traj.steps(), adapt_fraction);
  return with_params(stack, inner_adapt(stack, traj, split, steps, lr).params);
}

std::vector<std::vector<double>> encode_states(const symp::SympStack& stack, const datagen::Trajectory& traj) {
  std::vector<std::vector<double>> out;
  out.reserve(traj.steps());
  for (std::size_t t = 0; t < traj.steps(); ++t) out.push_back(symp::stack_forward(traj.point(t), stack).flat());
  return out;
}

TrainResult train_encoder(const std::vector<datagen::Trajectory>& data, const EncoderConfig& config,
                          const Telemetry& telemetry) {
  if (data.empty()) throw Error("encoder training needs at least one trajectory");
  const std::size_t d = data.front().d;
  for (const auto& t : data) {
    if (t.d != d) throw ShapeError("all encoder training trajectories must share d");
    t.validate();
  }
  if (config.batch_size == 0) throw Error("batch size must be positive");

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_train = static_cast<std::size_t>(std::round(config.train_fraction * static_cast<double>(data.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, data.size());
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  if (val.empty()) val = train;

  TrainResult result{make_encoder(d, config), {}, 0, false};
  symp::SympStack& global = result.model.stack;
  ad::ParamTable best = global.params;
  double best_val = std::numeric_limits<double>::infinity();
  ad::Adam outer({.lr = config.outer_lr, .weight_decay = config.weight_decay});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double inner_sum = 0.0, meta_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t b0 = 0; b0 < train.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(train.size(), b0 + config.batch_size);
      ad::ParamTable acc;
      std::size_t used = 0;
      for (std::size_t i = b0; i < b1; ++i) {
        const auto& traj = data[train[i]];
        const AdaptMetaSplit split = make_split(traj.steps(), config.adapt_fraction);
        try {
          InnerResult inner =
              inner_adapt(global, traj, split, config.inner_steps, config.inner_lr, config.dropconnect, &rng);
          auto [value, grads] = meta_loss_gradient(with_params(global, inner.params), traj, split, config.dropconnect, &rng);
          if (!std::isfinite(value) || value > config.divergence_threshold) {
            throw DivergenceError("encoder meta loss diverged (" + std::to_string(value) + ") on system '" +
                                  traj.system_id + "' at epoch " + std::to_string(epoch));
          }
          ad::axpy(acc, 1.0, grads);
          inner_sum += inner.losses.back();
          meta_sum += value;
          ++used;
          ++counted;
        } catch (const NonFiniteError& e) {
          log::warn("skipping system '" + traj.system_id + "' this epoch: " + e.what());
        }
      }
      if (used == 0) continue;
      ad::ParamTable mean;
      ad::axpy(mean, 1.0 / static_cast<double>(used), acc);
      outer.step(global.params, mean);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.inner_loss = counted ? inner_sum / static_cast<double>(counted) : 0.0;
    rec.meta_loss = counted ? meta_sum / static_cast<double>(counted) : 0.0;
    for (std::size_t idx : val) {
      const auto& traj = data[idx];
      const AdaptMetaSplit split = make_split(traj.steps(), config.adapt_fraction);
      const InnerResult inner = inner_adapt(global, traj, split, config.inner_steps, config.inner_lr);
      const symp::SympStack adapted = with_params(global, inner.params);
      rec.val_loss += meta_loss(adapted, traj, split.meta_begin, split.meta_end);
      rec.val_mse += forward_mse(adapted, traj, split.meta_begin, split.meta_end);
    }
    rec.val_loss /= static_cast<double>(val.size());
    rec.val_mse /= static_cast<double>(val.size());
    if (!std::isfinite(rec.val_loss) || rec.val_loss > config.divergence_threshold) {
      throw DivergenceError("encoder validation loss diverged at epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    if (telemetry) {
      telemetry({{"kind", "encoder_epoch"},
                 {"epoch", rec.epoch},
                 {"inner_loss", rec.inner_loss},
                 {"meta_loss", rec.meta_loss},
                 {"val_loss", rec.val_loss},
                 {"val_mse", rec.val_mse}});
    }
    log::debug("encoder epoch " + std::to_string(epoch) + " meta " + std::to_string(rec.meta_loss) + " val " +
               std::to_string(rec.val_loss));
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      best = global.params;
      result.best_epoch = epoch;
    } else if (epoch - result.best_epoch >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  global.params = best;

  std::vector<symp::PhasePoint> probes;
  for (const auto& traj : data) {
    const std::size_t stride = std::max<std::size_t>(1, traj.steps() / 8);
    for (std::size_t t = 0; t < traj.steps() && probes.size() < 100; t += stride) probes.push_back(traj.point(t));
  }
  const double defect = max_defect(global, probes);
  if (defect > 1e-8) throw Error("trained encoder violates symplecticity: defect " + std::to_string(defect));
  return result;
}

}  // namespace metasym::encoder
