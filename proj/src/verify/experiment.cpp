#include "metasym/verify/experiment.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "metasym/error.hpp"
#include "metasym/log.hpp"
#include "metasym/rollout/rollout.hpp"

namespace metasym::verify {
namespace {

std::vector<datagen::Trajectory> generate_all(const std::string& table, std::size_t count, std::uint64_t seed,
                                              const ExperimentConfig& config) {
  std::vector<datagen::Trajectory> out;
  auto corpus = datagen::generate_corpus(table, count, seed, config.sample);
  for (std::size_t i = 0; i < count; ++i) {
    datagen::Trajectory& tr = corpus.trajectories[i];
    if (config.noise > 0.0) tr = datagen::inject_noise(tr, config.noise, datagen::substream_seed(corpus.specs[i].seed, 0));
    out.push_back(std::move(tr));
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

template <class F>
double mean_score(const std::vector<SystemScore>& scores, F field) {
  std::vector<double> v;
  for (const auto& s : scores) v.push_back(field(s));
  return mean_of(v);
}

AblationRow make_row(const std::string& name, std::vector<double> per_seed) {
  return {name, mean_of(per_seed), stddev_of(per_seed), std::move(per_seed)};
}

// First predicted index of every rollout for system `traj`.
std::size_t rollout_start(const ExperimentConfig& config, const datagen::Trajectory& traj) {
  const auto split = encoder::make_split(traj.steps(), config.decoder.adapt_fraction);
  const std::size_t p = split.meta_begin + config.rollout_offset;
  if (p >= traj.steps()) throw ConfigError("rollout offset leaves no room for a rollout in '" + traj.system_id + "'");
  return p;
}

double rollout_mse(const rollout::RolloutResult& r, const std::vector<rollout::State>& truth) {
  if (r.halted) return std::numeric_limits<double>::infinity();
  return rollout::evaluate_rollout(r.states, truth).mse;
}

}  // namespace

Corpus build_corpus(const ExperimentConfig& config, std::uint64_t seed) {
  Corpus c;
  c.train = generate_all(config.train_table, config.train_count, datagen::substream_seed(seed, 0), config);
  c.test = generate_all(config.test_table, config.test_count, datagen::substream_seed(seed, 1), config);
  if (c.train.empty() || c.test.empty()) throw ConfigError("experiment needs at least one train and one test system");
  return c;
}

Prepared prepare(const ExperimentConfig& config, const Corpus& corpus, std::uint64_t seed) {
  encoder::EncoderConfig ecfg = config.encoder;
  ecfg.seed = datagen::substream_seed(seed, 2);
  Prepared p;
  p.encoder = encoder::train_encoder(corpus.train, ecfg);
  const symp::SympStack& global = p.encoder.model.stack;
  auto add = [&](const datagen::Trajectory& tr, std::vector<symp::SympStack>& encs,
                 std::vector<decoder::SystemData>& systems) {
    encs.push_back(
        encoder::adapted_encoder(global, tr, config.encoder_adapt_steps, config.encoder_adapt_lr, ecfg.adapt_fraction));
    systems.push_back({&tr, encoder::encode_states(encs.back(), tr)});
  };
  for (const auto& tr : corpus.train) add(tr, p.train_encoders, p.train_systems);
  for (const auto& tr : corpus.test) add(tr, p.test_encoders, p.test_systems);
  return p;
}

DecoderRun run_decoder(const ExperimentConfig& config, const Prepared& prepared, const decoder::DecoderConfig& dcfg_in,
                       std::uint64_t seed) {
  decoder::DecoderConfig dcfg = dcfg_in;
  dcfg.seed = datagen::substream_seed(seed, 3);
  if (config.rollout_offset < dcfg.context) throw ConfigError("rollout offset must be at least the context window");
  DecoderRun run;
  run.decoder = decoder::train_decoder(prepared.train_systems, dcfg);
  const decoder::DecoderModel& model = run.decoder.model;
  run.param_count = prepared.encoder.model.stack.params.count() + model.param_count();

  for (std::size_t i = 0; i < prepared.test_systems.size(); ++i) {
    const decoder::SystemData& sys = prepared.test_systems[i];
    const datagen::Trajectory& tr = *sys.traj;
    const auto split = encoder::make_split(tr.steps(), dcfg.adapt_fraction);
    const decoder::Batch meta =
        decoder::make_batch(tr, sys.latents, split.meta_begin, split.meta_end, model.context, model.hidden);
    const std::uint64_t zseed = datagen::substream_seed(seed, 100 + i);

    SystemScore score;
    score.id = tr.system_id;
    ad::ParamTable pre_zeta = run.decoder.zeta;
    if (dcfg.variant == decoder::Variant::meta_attention) {
      std::mt19937_64 rng(zseed);
      pre_zeta = decoder::init_zeta(model, dcfg.zeta_init_std, rng);
    }
    score.pre_mse = decoder::batch_loss(model, pre_zeta, meta);
    const decoder::Adapted adapted = decoder::adapt_for_system(run.decoder, sys, dcfg, zseed);
    score.adapted_mse = decoder::batch_loss(adapted.model, adapted.zeta, meta);

    const std::size_t p = rollout_start(config, tr);
    const std::size_t horizon = std::min(config.horizon, tr.steps() - p);
    const auto truth = rollout::segment(tr, p, horizon);
    const rollout::Model full{prepared.test_encoders[i], adapted.model, adapted.zeta, true};
    const auto r = rollout::rollout_from(full, tr, p - model.context, horizon);
    score.rollout_halted = r.halted;
    score.rollout_mse = rollout_mse(r, truth);
    const rollout::Model enc_only{prepared.test_encoders[i], {}, {}, false};
    score.encoder_rollout_mse = rollout_mse(rollout::rollout_from(enc_only, tr, p - 1, horizon), truth);
    score.persistence_mse = rollout::evaluate_rollout(rollout::persistence(tr.state(p - 1), horizon), truth).mse;
    run.scores.push_back(score);
    log::info("test system " + score.id + ": adapted " + std::to_string(score.adapted_mse) + " rollout " +
              std::to_string(score.rollout_mse));
  }
  return run;
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::uint64_t seed) {
  const Corpus corpus = build_corpus(config, seed);
  const Prepared prepared = prepare(config, corpus, seed);
  ExperimentResult res;
  res.run = run_decoder(config, prepared, config.decoder, seed);
  auto& scores = res.run.scores;
  if (config.with_mlp) {
    MlpConfig mcfg = config.mlp;
    const std::size_t d = corpus.train.front().d, m = corpus.train.front().m;
    mcfg.hidden = mlp_hidden_for_budget(d, m, res.run.param_count);
    mcfg.seed = datagen::substream_seed(seed, 4);
    std::vector<const datagen::Trajectory*> data;
    for (const auto& t : corpus.train) data.push_back(&t);
    const MlpResult mlp = train_mlp(data, mcfg);
    res.mlp_params = mlp_param_count(d, m, mcfg.hidden);
    for (std::size_t i = 0; i < corpus.test.size(); ++i) {
      const auto& tr = corpus.test[i];
      const std::size_t p = rollout_start(config, tr);
      const std::size_t horizon = std::min(config.horizon, tr.steps() - p);
      std::vector<rollout::State> controls;
      for (std::size_t t = p - 1; t + 1 < p + horizon && tr.m > 0; ++t) controls.push_back(tr.control(t));
      const auto pred = mlp_rollout(mlp.model, tr.state(p - 1), controls, tr.dt, horizon);
      scores[i].mlp_rollout_mse = rollout::evaluate_rollout(pred, rollout::segment(tr, p, horizon)).mse;
    }
  }
  res.mean_pre = mean_score(scores, [](const SystemScore& s) { return s.pre_mse; });
  res.mean_adapted = mean_score(scores, [](const SystemScore& s) { return s.adapted_mse; });
  res.mean_rollout = mean_score(scores, [](const SystemScore& s) { return s.rollout_mse; });
  res.mean_encoder_rollout = mean_score(scores, [](const SystemScore& s) { return s.encoder_rollout_mse; });
  res.mean_persistence = mean_score(scores, [](const SystemScore& s) { return s.persistence_mse; });
  res.mean_mlp_rollout = mean_score(scores, [](const SystemScore& s) { return s.mlp_rollout_mse; });
  return res;
}

std::vector<std::string> ablation_suites() { return {"table5", "table6", "conservative", "baseline"}; }

std::vector<AblationRow> run_ablation(const std::string& suite, const ExperimentConfig& config_in,
                                      const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  ExperimentConfig config = config_in;
  if (suite == "table5") {
    const std::vector<decoder::Variant> variants{decoder::Variant::meta_attention, decoder::Variant::no_meta_attention,
                                                 decoder::Variant::finetune_only};
    std::vector<std::vector<double>> per(variants.size());
    for (auto seed : seeds) {
      const Corpus corpus = build_corpus(config, seed);
      const Prepared prepared = prepare(config, corpus, seed);
      for (std::size_t v = 0; v < variants.size(); ++v) {
        decoder::DecoderConfig dcfg = config.decoder;
        dcfg.variant = variants[v];
        const DecoderRun run = run_decoder(config, prepared, dcfg, seed);
        per[v].push_back(mean_score(run.scores, [](const SystemScore& s) { return s.adapted_mse; }));
      }
    }
    std::vector<AblationRow> rows;
    for (std::size_t v = 0; v < variants.size(); ++v) rows.push_back(make_row(decoder::to_string(variants[v]), per[v]));
    return rows;
  }
  if (suite == "table6") {
    const std::vector<std::size_t> contexts{2, 10, 20, 30};
    config.rollout_offset = std::max<std::size_t>(config.rollout_offset, 30);
    std::vector<std::vector<double>> per(contexts.size());
    for (auto seed : seeds) {
      const Corpus corpus = build_corpus(config, seed);
      const Prepared prepared = prepare(config, corpus, seed);
      for (std::size_t k = 0; k < contexts.size(); ++k) {
        decoder::DecoderConfig dcfg = config.decoder;
        dcfg.context = contexts[k];
        // Each rollout covers one context window, so longer windows compound more steps.
        ExperimentConfig windowed = config;
        windowed.horizon = contexts[k];
        const DecoderRun run = run_decoder(windowed, prepared, dcfg, seed);
        per[k].push_back(mean_score(run.scores, [](const SystemScore& s) { return s.rollout_mse; }));
      }
    }
    std::vector<AblationRow> rows;
    for (std::size_t k = 0; k < contexts.size(); ++k) rows.push_back(make_row("c=" + std::to_string(contexts[k]), per[k]));
    return rows;
  }
  if (suite == "conservative") {
    config.train_table = "2a";
    config.test_table = "2a-cons";
    std::vector<double> pre, post, dissipative;
    for (auto seed : seeds) {
      const ExperimentResult r = run_experiment(config, seed);
      pre.push_back(r.mean_pre);
      post.push_back(r.mean_adapted);
      dissipative.push_back(r.run.decoder.history.at(r.run.decoder.best_epoch).val_loss);
    }
    return {make_row("pre_adaptation", pre), make_row("adapted", post), make_row("dissipative_val", dissipative)};
  }
  if (suite == "baseline") {
    config.with_mlp = true;
    std::vector<double> meta, mlp, enc, persist;
    for (auto seed : seeds) {
      const ExperimentResult r = run_experiment(config, seed);
      meta.push_back(r.mean_rollout);
      mlp.push_back(r.mean_mlp_rollout);
      enc.push_back(r.mean_encoder_rollout);
      persist.push_back(r.mean_persistence);
    }
    return {make_row("metasym", meta), make_row("mlp", mlp), make_row("encoder_only", enc),
            make_row("persistence", persist)};
  }
  throw ConfigError("unknown ablation suite '" + suite + "'");
}

nlohmann::json to_json(const AblationRow& row) {
  return {{"variant", row.variant}, {"mean", row.mean}, {"std", row.stddev}, {"per_seed", row.per_seed}};
}

nlohmann::json to_json(const SystemScore& s) {
  return {{"id", s.id},
          {"pre_mse", s.pre_mse},
          {"adapted_mse", s.adapted_mse},
          {"rollout_mse", s.rollout_mse},
          {"encoder_rollout_mse", s.encoder_rollout_mse},
          {"persistence_mse", s.persistence_mse},
          {"mlp_rollout_mse", s.mlp_rollout_mse},
          {"rollout_halted", s.rollout_halted}};
}

}  // namespace metasym::verify
