#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "metasym/autodiff/graph.hpp"
#include "metasym/autodiff/params.hpp"
#include "metasym/datagen/trajectory.hpp"
#include "metasym/sympnet/sympnet.hpp"

namespace metasym::decoder {

enum class Variant { meta_attention, no_meta_attention, finetune_only };
std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct DecoderConfig {
  std::size_t heads = 4;
  std::size_t hidden = 0;  // 0: smallest multiple of heads >= 2d
  std::size_t context = 30;
  double outer_lr = 7e-3;
  double inner_lr = 1e-2;
  std::size_t inner_steps = 10;
  double dropout = 0.1;
  double weight_decay = 1e-2;
  double zeta_init_std = 0.02;
  std::size_t epochs = 50;
  std::size_t patience = 312;
  std::size_t batch_size = 5;
  double adapt_fraction = 0.3;
  double train_fraction = 0.8;
  bool per_system_updates = false;
  Variant variant = Variant::meta_attention;
  double divergence_threshold = 1e6;
  std::uint64_t seed = 0;
};

/// Global parameters (names without the "zeta." prefix) plus dimensions.
/// Local per-system parameters live in a separate table with names
/// "zeta.Wq" (h x h) and "zeta.Wv" (2d x h).
struct DecoderModel {
  std::size_t d = 0;
  std::size_t m = 0;
  std::size_t hidden = 0;
  std::size_t heads = 4;
  std::size_t context = 30;
  ad::ParamTable global;

  std::size_t input_dim() const { return 2 * d + m + 1; }
  std::size_t param_count() const;  // global plus one set of local parameters
};

std::size_t default_hidden(std::size_t d, std::size_t heads);
DecoderModel make_decoder(std::size_t d, std::size_t m, const DecoderConfig& config, std::mt19937_64& rng);
ad::ParamTable init_zeta(const DecoderModel& model, double stddev, std::mt19937_64& rng);
bool is_local(const std::string& name);

/// Rows of several causal chunks stacked into one sequence. Row r holds the
/// decoder input for one transition; attention never crosses chunks.
struct Batch {
  ad::Tensor inputs;     // R x (2d + m + 1): [q, p, dt, u]
  ad::Tensor latents;    // R x 2d: encoder prediction Phi(x_t)
  ad::Tensor targets;    // R x 2d: x_{t+1}
  ad::Tensor positions;  // R x h sinusoidal encoding of the in-chunk index
  std::vector<std::size_t> chunks;  // lengths, summing to R
  std::size_t rows() const { return inputs.rows(); }
};

ad::Tensor positional_encoding(std::size_t length, std::size_t hidden);
/// L x L additive mask: 0 where column <= row, -1e30 above the diagonal.
ad::Tensor causal_mask(std::size_t length);

/// Non-overlapping chunks of length `context` over transitions [begin, end),
/// the last chunk possibly shorter. `latents[t]` is Phi(x_t).
Batch make_batch(const datagen::Trajectory& traj, const std::vector<std::vector<double>>& latents, std::size_t begin,
                 std::size_t end, std::size_t context, std::size_t hidden);

/// A single window given explicitly by its rows.
Batch make_window(const std::vector<std::vector<double>>& states, const std::vector<std::vector<double>>& controls,
                  const std::vector<std::vector<double>>& latents, double dt, std::size_t hidden);

/// Dropout masks are drawn from `rng` when it is set and `rate` > 0.
struct Dropout {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
};

ad::Var controlnet_project(ad::Var inputs, ad::Var weight, ad::Var bias);
/// Multi-head causal attention within each chunk, heads concatenated. `mask`
/// must be at least as large as the longest chunk.
ad::Var chunked_attention(ad::Var q, ad::Var k, ad::Var v, ad::Var mask, const std::vector<std::size_t>& chunks,
                          std::size_t heads);
/// Attention branch only; the caller adds the residual.
ad::Var masked_self_attention(ad::Var z, ad::Var wq, ad::Var wk, ad::Var wv, ad::Var wo, ad::Var mask,
                              const std::vector<std::size_t>& chunks, std::size_t heads);
/// Queries from the decoded stream via zeta.Wq, keys from the latents via the
/// global key projection, values from the latents via zeta.Wv. Branch only.
ad::Var meta_cross_attention(ad::Var decoded, ad::Var latents, ad::Var wk, ad::Var zeta_q, ad::Var zeta_v, ad::Var mask,
                             const std::vector<std::size_t>& chunks, std::size_t heads);

struct ForwardOut {
  ad::Var correction;  // F = dt * head output, R x 2d
  ad::Var prediction;  // latents + F
};

/// `params` must bind both the global and the local tables.
ForwardOut decoder_forward(ad::Graph& g, const DecoderModel& model, const ad::BoundParams& params, const Batch& batch,
                           const Dropout& dropout = {});

/// Mean squared error of the prediction over all rows and coordinates.
double batch_loss(const DecoderModel& model, const ad::ParamTable& zeta, const Batch& batch);
/// Predictions for every row, R x 2d, without dropout.
ad::Tensor predict(const DecoderModel& model, const ad::ParamTable& zeta, const Batch& batch);

struct InnerResult {
  ad::ParamTable zeta;
  std::vector<double> losses;  // before each step, then final
};

/// K AdamW steps on the local parameters only; the global table is untouched.
InnerResult inner_adapt_decoder(const DecoderModel& model, const ad::ParamTable& zeta, const Batch& adapt,
                                std::size_t steps, double lr, const Dropout& dropout = {});

/// Loss and gradient with respect to the global parameters, local frozen.
std::pair<double, ad::ParamTable> outer_gradient(const DecoderModel& model, const ad::ParamTable& zeta,
                                                 const Batch& meta, const Dropout& dropout = {});

/// All decoder parameters (global and local) fine-tuned jointly.
std::pair<DecoderModel, ad::ParamTable> finetune_all(const DecoderModel& model, const ad::ParamTable& zeta,
                                                     const Batch& adapt, std::size_t steps, double lr);

/// Training system: trajectory plus its encoder latents Phi(x_t).
struct SystemData {
  const datagen::Trajectory* traj = nullptr;
  std::vector<std::vector<double>> latents;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double inner_loss = 0.0;
  double outer_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  DecoderModel model;
  ad::ParamTable zeta;  // shared local parameters for the variants without meta-attention
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

using Telemetry = std::function<void(const nlohmann::json&)>;

TrainResult train_decoder(const std::vector<SystemData>& systems, const DecoderConfig& config,
                          const Telemetry& telemetry = {});

/// Per-system parameters used at evaluation time for the configured variant:
/// meta-attention adapts a fresh zeta, finetune-only tunes everything, the
/// no-meta-attention variant uses the trained tables as they are.
struct Adapted {
  DecoderModel model;
  ad::ParamTable zeta;
};
Adapted adapt_for_system(const TrainResult& trained, const SystemData& system, const DecoderConfig& config,
                         std::uint64_t seed);

}  // namespace metasym::decoder
