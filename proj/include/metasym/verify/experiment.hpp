#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "metasym/datagen/datagen.hpp"
#include "metasym/decoder/decoder.hpp"
#include "metasym/encoder/encoder.hpp"
#include "metasym/verify/verify.hpp"

namespace metasym::verify {

/// End-to-end desk-scale run: sample systems, meta-train the encoder, train
/// the decoder on encoder latents, adapt to held-out systems and score them.
struct ExperimentConfig {
  std::string train_table = "2a";
  std::size_t train_count = 20;
  std::string test_table = "2a";
  std::size_t test_count = 5;
  datagen::SampleOptions sample{.steps = 300};
  double noise = 0.0;
  encoder::EncoderConfig encoder;
  decoder::DecoderConfig decoder;
  // Per-system test-time adaptation of the encoder before computing latents.
  std::size_t encoder_adapt_steps = 3;
  double encoder_adapt_lr = 3e-3;
  // Rollouts start this many transitions into the meta split, which leaves
  // room for the largest context window.
  std::size_t rollout_offset = 30;
  std::size_t horizon = 100;
  bool with_mlp = false;
  MlpConfig mlp;
};

struct Corpus {
  std::vector<datagen::Trajectory> train;
  std::vector<datagen::Trajectory> test;
};

/// Train and test systems drawn from independent substreams of `seed`.
Corpus build_corpus(const ExperimentConfig& config, std::uint64_t seed);

struct Prepared {
  encoder::TrainResult encoder;
  // Per system: the adapted encoder and its latents Phi(x_t).
  std::vector<symp::SympStack> train_encoders, test_encoders;
  std::vector<decoder::SystemData> train_systems, test_systems;
};

/// Trains the encoder. `corpus` must outlive the result.
Prepared prepare(const ExperimentConfig& config, const Corpus& corpus, std::uint64_t seed);

struct SystemScore {
  std::string id;
  double pre_mse = 0.0;      // meta-split one-step MSE before decoder adaptation
  double adapted_mse = 0.0;  // after adaptation
  double rollout_mse = 0.0;
  double encoder_rollout_mse = 0.0;
  double persistence_mse = 0.0;
  double mlp_rollout_mse = 0.0;
  bool rollout_halted = false;
};

struct DecoderRun {
  decoder::TrainResult decoder;
  std::vector<SystemScore> scores;
  std::size_t param_count = 0;  // encoder plus decoder (one set of local parameters)
};

DecoderRun run_decoder(const ExperimentConfig& config, const Prepared& prepared, const decoder::DecoderConfig& dcfg,
                       std::uint64_t seed);

struct ExperimentResult {
  DecoderRun run;
  std::size_t mlp_params = 0;
  double mean_pre = 0.0, mean_adapted = 0.0, mean_rollout = 0.0, mean_encoder_rollout = 0.0, mean_persistence = 0.0,
         mean_mlp_rollout = 0.0;
};

/// Full pipeline for one seed; the MLP baseline is trained at a matched
/// parameter budget when `with_mlp` is set.
ExperimentResult run_experiment(const ExperimentConfig& config, std::uint64_t seed);

struct AblationRow {
  std::string variant;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over seeds
  std::vector<double> per_seed;
};

/// Suites: "table5" (adapted one-step MSE for the three decoder variants),
/// "table6" (rollout MSE over one window of context 2, 10, 20, 30), "conservative"
/// (pre/post adaptation MSE on conservative meshes after dissipative
/// training) and "baseline" (MetaSym against the MLP rollout).
std::vector<AblationRow> run_ablation(const std::string& suite, const ExperimentConfig& config,
                                      const std::vector<std::uint64_t>& seeds);
std::vector<std::string> ablation_suites();

nlohmann::json to_json(const AblationRow& row);
nlohmann::json to_json(const SystemScore& score);

}  // namespace metasym::verify
