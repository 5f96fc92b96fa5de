#include "metasym/decoder/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "metasym/autodiff/adam.hpp"
#include "metasym/datagen/datagen.hpp"
#include "metasym/encoder/encoder.hpp"
#include "metasym/error.hpp"
#include "metasym/log.hpp"

namespace metasym::decoder {
namespace {

constexpr double kMasked = -1e30;

ad::Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  ad::Tensor t = ad::Tensor::zeros(rows, cols);
  for (auto& v : t.storage()) v = n(rng);
  return t;
}

ad::ParamTable merged(const ad::ParamTable& global, const ad::ParamTable& zeta) {
  ad::ParamTable all = global;
  all.merge(zeta);
  return all;
}

void split_into(const ad::ParamTable& all, ad::ParamTable& global, ad::ParamTable& zeta) {
  for (const auto& [name, value] : all) (is_local(name) ? zeta : global).set(name, value);
}

ad::Var dropout_mask(ad::Graph& g, ad::Var x, const Dropout& dropout) {
  if (dropout.rate <= 0.0 || dropout.rng == nullptr) return x;
  if (dropout.rate >= 1.0) throw Error("dropout rate must be below 1");
  std::bernoulli_distribution keep(1.0 - dropout.rate);
  ad::Tensor m = ad::Tensor::zeros(x.value().rows(), x.value().cols());
  for (auto& v : m.storage()) v = keep(*dropout.rng) ? 1.0 / (1.0 - dropout.rate) : 0.0;
  return ad::mul(x, g.constant(std::move(m)));
}

ad::Var loss_graph(ad::Graph& g, const DecoderModel& model, const ad::BoundParams& bp, const Batch& batch,
                   const Dropout& dropout) {
  const ForwardOut out = decoder_forward(g, model, bp, batch, dropout);
  return ad::mean_squared_error(out.prediction, g.constant(batch.targets));
}

bool global_only(const std::string& name) { return !is_local(name); }

void check_batch(const DecoderModel& model, const Batch& batch) {
  const std::size_t r = batch.rows();
  if (r == 0) throw Error("decoder batch is empty");
  if (batch.inputs.cols() != model.input_dim() || batch.latents.rows() != r || batch.latents.cols() != 2 * model.d ||
      batch.positions.rows() != r || batch.positions.cols() != model.hidden) {
    throw ShapeError("decoder batch does not match the model dimensions");
  }
  if (std::accumulate(batch.chunks.begin(), batch.chunks.end(), std::size_t{0}) != r) {
    throw ShapeError("decoder batch chunk lengths do not sum to the row count");
  }
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::meta_attention:
      return "meta_attention";
    case Variant::no_meta_attention:
      return "no_meta_attention";
    case Variant::finetune_only:
      return "finetune_only";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "meta_attention") return Variant::meta_attention;
  if (s == "no_meta_attention") return Variant::no_meta_attention;
  if (s == "finetune_only") return Variant::finetune_only;
  throw ConfigError("unknown decoder variant '" + s + "'");
}

std::size_t DecoderModel::param_count() const { return global.count() + hidden * hidden + 2 * d * hidden; }

std::size_t default_hidden(std::size_t d, std::size_t heads) {
  if (heads == 0) throw ConfigError("decoder needs at least one attention head");
  return (2 * d + heads - 1) / heads * heads;
}

bool is_local(const std::string& name) { return name.rfind("zeta.", 0) == 0; }

DecoderModel make_decoder(std::size_t d, std::size_t m, const DecoderConfig& config, std::mt19937_64& rng) {
  if (d == 0) throw ShapeError("decoder needs d >= 1");
  if (config.context == 0) throw ConfigError("decoder context length must be positive");
  DecoderModel model;
  model.d = d;
  model.m = m;
  model.heads = config.heads;
  model.hidden = config.hidden ? config.hidden : default_hidden(d, config.heads);
  if (model.hidden % model.heads != 0) throw ConfigError("decoder hidden width must be a multiple of the head count");
  model.context = config.context;
  const std::size_t h = model.hidden, in = model.input_dim();
  const double sh = 1.0 / std::sqrt(static_cast<double>(h));
  model.global.set("ctrl.W", gaussian(in, h, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  model.global.set("ctrl.b", ad::Tensor::zeros(1, h));
  for (const char* name : {"self.Wq", "self.Wk", "self.Wv", "self.Wo"}) model.global.set(name, gaussian(h, h, sh, rng));
  model.global.set("cross.Wk", gaussian(2 * d, h, 1.0 / std::sqrt(static_cast<double>(2 * d)), rng));
  model.global.set("head.W1", gaussian(h, h, sh, rng));
  model.global.set("head.b1", ad::Tensor::zeros(1, h));
  // Zero output layer: an untrained decoder returns the encoder prediction.
  model.global.set("head.W2", ad::Tensor::zeros(h, 2 * d));
  model.global.set("head.b2", ad::Tensor::zeros(1, 2 * d));
  return model;
}

ad::ParamTable init_zeta(const DecoderModel& model, double stddev, std::mt19937_64& rng) {
  ad::ParamTable z;
  z.set("zeta.Wq", gaussian(model.hidden, model.hidden, stddev, rng));
  z.set("zeta.Wv", gaussian(2 * model.d, model.hidden, stddev, rng));
  return z;
}

ad::Tensor positional_encoding(std::size_t length, std::size_t hidden) {
  ad::Tensor pe = ad::Tensor::zeros(length, hidden);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < hidden; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i / 2 * 2) / static_cast<double>(hidden));
      const double angle = static_cast<double>(t) * freq;
      pe.at(t, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

ad::Tensor causal_mask(std::size_t length) {
  ad::Tensor m = ad::Tensor::zeros(length, length);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = i + 1; j < length; ++j) m.at(i, j) = kMasked;
  return m;
}

Batch make_batch(const datagen::Trajectory& traj, const std::vector<std::vector<double>>& latents, std::size_t begin,
                 std::size_t end, std::size_t context, std::size_t hidden) {
  if (begin >= end) throw Error("empty transition range for '" + traj.system_id + "'");
  if (end + 1 > traj.steps()) throw ShapeError("transition range exceeds trajectory '" + traj.system_id + "'");
  if (latents.size() != traj.steps()) throw ShapeError("latent count does not match trajectory '" + traj.system_id + "'");
  if (context == 0) throw ConfigError("decoder context length must be positive");
  const std::size_t r = end - begin, n = 2 * traj.d, in = n + traj.m + 1;
  Batch b;
  b.inputs = ad::Tensor::zeros(r, in);
  b.latents = ad::Tensor::zeros(r, n);
  b.targets = ad::Tensor::zeros(r, n);
  b.positions = ad::Tensor::zeros(r, hidden);
  const ad::Tensor pe = positional_encoding(context, hidden);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t t = begin + i;
    const auto x = traj.state(t), y = traj.state(t + 1);
    const auto u = traj.control(t);
    if (latents[t].size() != n) throw ShapeError("latent width does not match 2d");
    for (std::size_t k = 0; k < n; ++k) {
      b.inputs.at(i, k) = x[k];
      b.latents.at(i, k) = latents[t][k];
      b.targets.at(i, k) = y[k];
    }
    b.inputs.at(i, n) = traj.dt;
    for (std::size_t k = 0; k < traj.m; ++k) b.inputs.at(i, n + 1 + k) = u[k];
    for (std::size_t k = 0; k < hidden; ++k) b.positions.at(i, k) = pe.at(i % context, k);
  }
  for (std::size_t s = 0; s < r; s += context) b.chunks.push_back(std::min(context, r - s));
  return b;
}

Batch make_window(const std::vector<std::vector<double>>& states, const std::vector<std::vector<double>>& controls,
                  const std::vector<std::vector<double>>& latents, double dt, std::size_t hidden) {
  const std::size_t r = states.size();
  if (r == 0 || latents.size() != r) throw ShapeError("window states and latents must be non-empty and aligned");
  if (!controls.empty() && controls.size() != r) throw ShapeError("window controls must align with the states");
  const std::size_t n = states.front().size();
  const std::size_t m = controls.empty() ? 0 : controls.front().size();
  Batch b;
  b.inputs = ad::Tensor::zeros(r, n + m + 1);
  b.latents = ad::Tensor::zeros(r, n);
  b.targets = ad::Tensor::zeros(r, n);
  b.positions = positional_encoding(r, hidden);
  for (std::size_t i = 0; i < r; ++i) {
    if (states[i].size() != n || latents[i].size() != n) throw ShapeError("window rows must share the state width");
    for (std::size_t k = 0; k < n; ++k) {
      b.inputs.at(i, k) = states[i][k];
      b.latents.at(i, k) = latents[i][k];
    }
    b.inputs.at(i, n) = dt;
    for (std::size_t k = 0; k < m; ++k) b.inputs.at(i, n + 1 + k) = controls[i][k];
  }
  b.chunks = {r};
  return b;
}

ad::Var controlnet_project(ad::Var inputs, ad::Var weight, ad::Var bias) {
  return ad::add(ad::matmul(inputs, weight), bias);
}

ad::Var chunked_attention(ad::Var q, ad::Var k, ad::Var v, ad::Var mask, const std::vector<std::size_t>& chunks,
                          std::size_t heads) {
  const std::size_t h = q.value().cols();
  if (heads == 0 || h % heads != 0) throw ShapeError("attention width must be a multiple of the head count");
  const std::size_t dh = h / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> rows;
  std::size_t r0 = 0;
  for (std::size_t len : chunks) {
    if (len > mask.value().rows()) throw ShapeError("chunk longer than the attention mask");
    const ad::Var m = ad::slice(mask, 0, len, 0, len);
    const ad::Var qc = ad::slice_rows(q, r0, r0 + len), kc = ad::slice_rows(k, r0, r0 + len),
                  vc = ad::slice_rows(v, r0, r0 + len);
    std::vector<ad::Var> cols;
    for (std::size_t i = 0; i < heads; ++i) {
      const ad::Var qh = ad::slice_cols(qc, i * dh, (i + 1) * dh);
      const ad::Var kh = ad::slice_cols(kc, i * dh, (i + 1) * dh);
      const ad::Var vh = ad::slice_cols(vc, i * dh, (i + 1) * dh);
      const ad::Var scores = ad::add(ad::scale(ad::matmul(qh, kh, false, true), inv), m);
      cols.push_back(ad::matmul(ad::softmax_rows(scores), vh));
    }
    rows.push_back(heads == 1 ? cols.front() : ad::concat(cols, 1));
    r0 += len;
  }
  if (r0 != q.value().rows()) throw ShapeError("chunk lengths do not cover the attention rows");
  return rows.size() == 1 ? rows.front() : ad::concat(rows, 0);
}

ad::Var masked_self_attention(ad::Var z, ad::Var wq, ad::Var wk, ad::Var wv, ad::Var wo, ad::Var mask,
                              const std::vector<std::size_t>& chunks, std::size_t heads) {
  const ad::Var a = chunked_attention(ad::matmul(z, wq), ad::matmul(z, wk), ad::matmul(z, wv), mask, chunks, heads);
  return ad::matmul(a, wo);
}

ad::Var meta_cross_attention(ad::Var decoded, ad::Var latents, ad::Var wk, ad::Var zeta_q, ad::Var zeta_v, ad::Var mask,
                             const std::vector<std::size_t>& chunks, std::size_t heads) {
  return chunked_attention(ad::matmul(decoded, zeta_q), ad::matmul(latents, wk), ad::matmul(latents, zeta_v), mask,
                           chunks, heads);
}

ForwardOut decoder_forward(ad::Graph& g, const DecoderModel& model, const ad::BoundParams& p, const Batch& batch,
                           const Dropout& dropout) {
  check_batch(model, batch);
  const std::size_t longest = *std::max_element(batch.chunks.begin(), batch.chunks.end());
  const ad::Var mask = g.constant(causal_mask(longest));
  const ad::Var latents = g.constant(batch.latents);
  const ad::Var z = ad::add(controlnet_project(g.constant(batch.inputs), p["ctrl.W"], p["ctrl.b"]),
                            g.constant(batch.positions));
  const ad::Var a = masked_self_attention(z, p["self.Wq"], p["self.Wk"], p["self.Wv"], p["self.Wo"], mask,
                                          batch.chunks, model.heads);
  const ad::Var y = ad::add(z, dropout_mask(g, a, dropout));
  const ad::Var c =
      meta_cross_attention(y, latents, p["cross.Wk"], p["zeta.Wq"], p["zeta.Wv"], mask, batch.chunks, model.heads);
  const ad::Var r = ad::add(y, c);
  const ad::Var hidden = dropout_mask(g, ad::tanh(ad::add(ad::matmul(r, p["head.W1"]), p["head.b1"])), dropout);
  // The head outputs a rate; every row of a batch shares one dt.
  const double dt = batch.inputs.at(0, 2 * model.d);
  const ad::Var f = ad::scale(ad::add(ad::matmul(hidden, p["head.W2"]), p["head.b2"]), dt);
  return {f, ad::add(latents, f)};
}

double batch_loss(const DecoderModel& model, const ad::ParamTable& zeta, const Batch& batch) {
  ad::Graph g;
  ad::BoundParams bp(g, merged(model.global, zeta), [](const std::string&) { return false; });
  return loss_graph(g, model, bp, batch, {}).value().item();
}

ad::Tensor predict(const DecoderModel& model, const ad::ParamTable& zeta, const Batch& batch) {
  ad::Graph g;
  ad::BoundParams bp(g, merged(model.global, zeta), [](const std::string&) { return false; });
  return decoder_forward(g, model, bp, batch).prediction.value();
}

InnerResult inner_adapt_decoder(const DecoderModel& model, const ad::ParamTable& zeta, const Batch& adapt,
                                std::size_t steps, double lr, const Dropout& dropout) {
  InnerResult out{zeta, {}};
  ad::Adam opt({.lr = lr});
  for (std::size_t k = 0; k <= steps; ++k) {
    const bool last = k == steps;
    ad::Graph g;
    ad::BoundParams bp(g, merged(model.global, out.zeta), is_local);
    const ad::Var loss = loss_graph(g, model, bp, adapt, last ? Dropout{} : dropout);
    out.losses.push_back(loss.value().item());
    if (last) break;
    opt.step(out.zeta, bp.gradients(g.backward(loss)));
  }
  return out;
}

std::pair<double, ad::ParamTable> outer_gradient(const DecoderModel& model, const ad::ParamTable& zeta,
                                                 const Batch& meta, const Dropout& dropout) {
  ad::Graph g;
  ad::BoundParams bp(g, merged(model.global, zeta), global_only);
  const ad::Var loss = loss_graph(g, model, bp, meta, dropout);
  const double value = loss.value().item();
  return {value, bp.gradients(g.backward(loss))};
}

std::pair<DecoderModel, ad::ParamTable> finetune_all(const DecoderModel& model, const ad::ParamTable& zeta,
                                                     const Batch& adapt, std::size_t steps, double lr) {
  ad::ParamTable all = merged(model.global, zeta);
  ad::Adam opt({.lr = lr});
  for (std::size_t k = 0; k < steps; ++k) {
    ad::Graph g;
    ad::BoundParams bp(g, all, ad::all_trainable);
    const ad::Var loss = loss_graph(g, model, bp, adapt, {});
    opt.step(all, bp.gradients(g.backward(loss)));
  }
  DecoderModel tuned = model;
  tuned.global = {};
  ad::ParamTable z;
  split_into(all, tuned.global, z);
  return {tuned, z};
}

Adapted adapt_for_system(const TrainResult& trained, const SystemData& system, const DecoderConfig& config,
                         std::uint64_t seed) {
  const auto& traj = *system.traj;
  const auto split = encoder::make_split(traj.steps(), config.adapt_fraction);
  const DecoderModel& model = trained.model;
  switch (config.variant) {
    case Variant::meta_attention: {
      const Batch adapt =
          make_batch(traj, system.latents, split.adapt_begin, split.adapt_end, model.context, model.hidden);
      std::mt19937_64 rng(seed);
      const ad::ParamTable z0 = init_zeta(model, config.zeta_init_std, rng);
      return {model, inner_adapt_decoder(model, z0, adapt, config.inner_steps, config.inner_lr).zeta};
    }
    case Variant::finetune_only: {
      const Batch adapt =
          make_batch(traj, system.latents, split.adapt_begin, split.adapt_end, model.context, model.hidden);
      auto [tuned, z] = finetune_all(model, trained.zeta, adapt, config.inner_steps, config.inner_lr);
      return {tuned, z};
    }
    case Variant::no_meta_attention:
      break;
  }
  return {model, trained.zeta};
}

TrainResult train_decoder(const std::vector<SystemData>& systems, const DecoderConfig& config,
                          const Telemetry& telemetry) {
  if (systems.empty()) throw Error("decoder training needs at least one system");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  const std::size_t d = systems.front().traj->d, m = systems.front().traj->m;
  for (const auto& s : systems) {
    if (s.traj == nullptr) throw Error("decoder training system without a trajectory");
    if (s.traj->d != d || s.traj->m != m) throw ShapeError("all decoder training systems must share d and m");
    s.traj->validate();
    if (s.latents.size() != s.traj->steps()) throw ShapeError("latents missing for '" + s.traj->system_id + "'");
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(systems.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_train = static_cast<std::size_t>(std::round(config.train_fraction * static_cast<double>(systems.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, systems.size());
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  if (val.empty()) val = train;

  TrainResult result;
  result.model = make_decoder(d, m, config, rng);
  result.zeta = init_zeta(result.model, config.zeta_init_std, rng);
  const DecoderModel& model = result.model;

  struct Batches {
    Batch adapt, meta, full;
  };
  std::vector<Batches> batches;
  batches.reserve(systems.size());
  for (const auto& s : systems) {
    const auto split = encoder::make_split(s.traj->steps(), config.adapt_fraction);
    batches.push_back({make_batch(*s.traj, s.latents, split.adapt_begin, split.adapt_end, model.context, model.hidden),
                       make_batch(*s.traj, s.latents, split.meta_begin, split.meta_end, model.context, model.hidden),
                       make_batch(*s.traj, s.latents, 0, s.traj->steps() - 1, model.context, model.hidden)});
  }

  const bool meta = config.variant == Variant::meta_attention;
  // Without meta-attention the local projections are ordinary global weights.
  ad::ParamTable trained = meta ? model.global : merged(model.global, result.zeta);
  ad::ParamTable best = trained;
  double best_val = std::numeric_limits<double>::infinity();
  ad::Adam outer({.lr = config.outer_lr, .weight_decay = config.weight_decay});
  const Dropout dropout{config.dropout, &rng};

  auto sync = [&]() {
    ad::ParamTable g, z;
    split_into(trained, g, z);
    result.model.global = g;
    if (!meta) result.zeta = z;
  };
  auto check = [&](double value, const std::string& what, std::size_t epoch) {
    if (!std::isfinite(value) || value > config.divergence_threshold) {
      throw DivergenceError("decoder " + what + " diverged (" + std::to_string(value) + ") at epoch " +
                            std::to_string(epoch));
    }
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double inner_sum = 0.0, outer_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t b0 = 0; b0 < train.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(train.size(), b0 + config.batch_size);
      ad::ParamTable acc;
      std::size_t used = 0;
      for (std::size_t i = b0; i < b1; ++i) {
        const Batches& sb = batches[train[i]];
        try {
          double value = 0.0;
          ad::ParamTable grads;
          if (meta) {
            const ad::ParamTable z0 = init_zeta(model, config.zeta_init_std, rng);
            const InnerResult inner =
                inner_adapt_decoder(model, z0, sb.adapt, config.inner_steps, config.inner_lr, dropout);
            std::tie(value, grads) = outer_gradient(model, inner.zeta, sb.meta, dropout);
            inner_sum += inner.losses.back();
          } else {
            ad::Graph g;
            ad::BoundParams bp(g, trained, ad::all_trainable);
            const ad::Var loss = loss_graph(g, model, bp, sb.full, dropout);
            value = loss.value().item();
            grads = bp.gradients(g.backward(loss));
          }
          check(value, "training loss on '" + systems[train[i]].traj->system_id + "'", epoch);
          outer_sum += value;
          ++counted;
          if (config.per_system_updates) {
            outer.step(trained, grads);
            sync();
          } else {
            ad::axpy(acc, 1.0, grads);
            ++used;
          }
        } catch (const NonFiniteError& e) {
          log::warn("skipping system '" + systems[train[i]].traj->system_id + "' this epoch: " + e.what());
        }
      }
      if (used == 0) continue;
      ad::ParamTable mean;
      ad::axpy(mean, 1.0 / static_cast<double>(used), acc);
      outer.step(trained, mean);
      sync();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.inner_loss = counted && meta ? inner_sum / static_cast<double>(counted) : 0.0;
    rec.outer_loss = counted ? outer_sum / static_cast<double>(counted) : 0.0;
    for (std::size_t idx : val) {
      const Adapted a = adapt_for_system(result, systems[idx], config, datagen::substream_seed(config.seed, idx));
      rec.val_loss += batch_loss(a.model, a.zeta, batches[idx].meta);
    }
    rec.val_loss /= static_cast<double>(val.size());
    check(rec.val_loss, "validation loss", epoch);
    result.history.push_back(rec);
    if (telemetry) {
      telemetry({{"kind", "decoder_epoch"},
                 {"variant", to_string(config.variant)},
                 {"epoch", rec.epoch},
                 {"inner_loss", rec.inner_loss},
                 {"outer_loss", rec.outer_loss},
                 {"val_loss", rec.val_loss}});
    }
    log::debug("decoder epoch " + std::to_string(epoch) + " outer " + std::to_string(rec.outer_loss) + " val " +
               std::to_string(rec.val_loss));
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      best = trained;
      result.best_epoch = epoch;
    } else if (epoch - result.best_epoch >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  trained = best;
  sync();
  return result;
}

}  // namespace metasym::decoder
