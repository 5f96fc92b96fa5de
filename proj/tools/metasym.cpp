// metasym: command-line entry points over the library.
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "metasym/datagen/datagen.hpp"
#include "metasym/decoder/decoder.hpp"
#include "metasym/encoder/encoder.hpp"
#include "metasym/error.hpp"
#include "metasym/io/config.hpp"
#include "metasym/io/files.hpp"
#include "metasym/log.hpp"
#include "metasym/rollout/rollout.hpp"
#include "metasym/verify/experiment.hpp"
#include "metasym/verify/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace metasym;

namespace {

// Seed substreams of the run seed, shared with the in-process experiment.
constexpr std::uint64_t kTrainData = 0, kTestData = 1, kEncoderStream = 2, kDecoderStream = 3;
constexpr std::uint64_t kZetaStream = 100;

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

io::RunConfig load(const std::string& path) {
  if (path.empty()) throw ConfigError("--config is required", "config");
  return io::load_config(path);
}

std::vector<datagen::Trajectory> load_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("data directory '" + dir + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<datagen::Trajectory> out;
  for (const auto& f : files) out.push_back(io::read_trajectory(f.string()).traj);
  if (out.empty()) throw IoError("no trajectory files in '" + dir + "'");
  return out;
}

void fresh_file(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::remove(p);
}

// ---------------------------------------------------------------- config

struct ConfigOpts {
  std::string preset_name, out;
};

void cmd_config(const ConfigOpts& o) {
  const io::RunConfig c = io::preset(o.preset_name);
  if (o.out.empty()) {
    emit(io::to_json(c));
    return;
  }
  fresh_file(o.out);
  io::save_config(o.out, c);
  emit({{"config", o.out}, {"fingerprint", io::fingerprint(c)}});
}

// ---------------------------------------------------------------- generate

struct GenerateOpts {
  std::string config, split = "train", system, table, out;
  std::optional<std::size_t> count, steps, nx, ny, fock_dim;
  std::optional<std::uint64_t> seed;
  std::optional<double> noise;
};

std::string system_of_table(const std::string& table) {
  if (table.rfind("2", 0) == 0) return "spring";
  if (table.rfind("3", 0) == 0) return "quantum";
  if (table.rfind("8", 0) == 0) return "oscillator";
  throw ConfigError("unknown parameter table '" + table + "'", "table");
}

void cmd_generate(const GenerateOpts& o) {
  std::string table, fp;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  double noise = 0.0;
  datagen::SampleOptions sample;
  if (!o.config.empty()) {
    // Reproduce the corpus an in-process run with this config would draw.
    const io::RunConfig c = load(o.config);
    const auto& e = c.experiment;
    if (o.split != "train" && o.split != "test") throw ConfigError("--split must be train or test", "split");
    const bool train = o.split == "train";
    table = train ? e.train_table : e.test_table;
    count = train ? e.train_count : e.test_count;
    seed = datagen::substream_seed(c.seed, train ? kTrainData : kTestData);
    sample = e.sample;
    noise = e.noise;
    fp = io::fingerprint(c);
  }
  if (!o.table.empty()) table = o.table;
  if (table.empty()) throw ConfigError("--table is required without --config", "table");
  if (o.count) count = *o.count;
  if (o.seed) seed = *o.seed;
  if (o.steps) sample.steps = *o.steps;
  if (o.nx) sample.nx = *o.nx;
  if (o.ny) sample.ny = *o.ny;
  if (o.fock_dim) sample.fock_dim = *o.fock_dim;
  if (o.noise) noise = *o.noise;
  if (noise < 0.0) throw ConfigError("--noise must be non-negative", "noise");
  const std::string system = system_of_table(table);
  if (!o.system.empty() && o.system != system)
    throw ConfigError("table '" + table + "' belongs to system '" + system + "', not '" + o.system + "'", "system");
  if (o.out.empty()) throw ConfigError("--out is required", "out");

  const json args = {{"table", table}, {"count", count},     {"seed", seed},       {"steps", sample.steps},
                     {"nx", sample.nx}, {"ny", sample.ny}, {"fock_dim", sample.fock_dim}, {"noise", noise}};
  if (fp.empty()) fp = io::fnv1a_hex(args.dump());

  fs::create_directories(o.out);
  json entries = json::array();
  auto corpus = datagen::generate_corpus(table, count, seed, sample);
  for (std::size_t i = 0; i < count; ++i) {
    const datagen::SystemSpec& spec = corpus.specs[i];
    datagen::Trajectory tr = std::move(corpus.trajectories[i]);
    if (noise > 0.0) tr = datagen::inject_noise(tr, noise, datagen::substream_seed(spec.seed, 0));
    const std::string file = spec.id + ".jsonl";
    io::write_trajectory((fs::path(o.out) / file).string(), tr, fp);
    json entry = datagen::to_json(spec);
    entry["file"] = file;
    entry["params"] = tr.params;
    entry["noise"] = noise;
    entries.push_back(entry);
    log::info("wrote " + file);
  }
  json rejected = json::array();
  for (const auto& spec : corpus.rejected) rejected.push_back(datagen::to_json(spec));
  io::write_manifest((fs::path(o.out) / "manifest.json").string(), fp, entries, rejected);
  emit({{"fingerprint", fp}, {"count", entries.size()}, {"rejected", rejected.size()}, {"out", o.out}, {"arguments", args}});
}

// ---------------------------------------------------------------- train-encoder

struct TrainEncoderOpts {
  std::string config, data, out;
};

void cmd_train_encoder(const TrainEncoderOpts& o) {
  const io::RunConfig c = load(o.config);
  const std::string fp = io::fingerprint(c);
  const auto data = load_dir(o.data);
  encoder::EncoderConfig ecfg = c.experiment.encoder;
  ecfg.seed = datagen::substream_seed(c.seed, kEncoderStream);
  const fs::path out(o.out);
  const fs::path tel = out / "encoder_telemetry.jsonl";
  fresh_file(tel);
  io::TelemetryWriter writer(tel.string(), fp);
  const auto res = encoder::train_encoder(data, ecfg, std::ref(writer));
  const fs::path ck = out / "encoder.ckpt";
  io::save_checkpoint(ck.string(), io::encoder_checkpoint(res.model.stack, fp));
  const auto& best = res.history.at(res.best_epoch);
  emit({{"checkpoint", ck.string()},
        {"telemetry", tel.string()},
        {"fingerprint", fp},
        {"systems", data.size()},
        {"epochs", res.history.size()},
        {"best_epoch", res.best_epoch},
        {"early_stopped", res.early_stopped},
        {"val_mse", best.val_mse},
        {"val_loss", best.val_loss}});
}

// ---------------------------------------------------------------- train-decoder

struct TrainDecoderOpts {
  std::string config, data, encoder, out;
  bool no_meta_attention = false, finetune_only = false;
};

decoder::DecoderConfig decoder_config(const io::RunConfig& c, bool no_meta, bool finetune) {
  decoder::DecoderConfig d = c.experiment.decoder;
  if (no_meta && finetune) throw ConfigError("--no-meta-attention and --finetune-only are exclusive", "decoder.variant");
  if (no_meta) d.variant = decoder::Variant::no_meta_attention;
  if (finetune) d.variant = decoder::Variant::finetune_only;
  return d;
}

std::vector<decoder::SystemData> latents_for(const io::RunConfig& c, const symp::SympStack& enc,
                                             const std::vector<datagen::Trajectory>& data) {
  std::vector<decoder::SystemData> out;
  const auto& e = c.experiment;
  for (const auto& tr : data) {
    const auto adapted = encoder::adapted_encoder(enc, tr, e.encoder_adapt_steps, e.encoder_adapt_lr,
                                                  e.encoder.adapt_fraction);
    out.push_back({&tr, encoder::encode_states(adapted, tr)});
  }
  return out;
}

void cmd_train_decoder(const TrainDecoderOpts& o) {
  const io::RunConfig c = load(o.config);
  const std::string fp = io::fingerprint(c);
  const auto data = load_dir(o.data);
  const auto enc = io::encoder_from_checkpoint(io::load_checkpoint(o.encoder));
  decoder::DecoderConfig dcfg = decoder_config(c, o.no_meta_attention, o.finetune_only);
  dcfg.seed = datagen::substream_seed(c.seed, kDecoderStream);
  const auto systems = latents_for(c, enc, data);
  const fs::path out(o.out);
  const fs::path tel = out / "decoder_telemetry.jsonl";
  fresh_file(tel);
  io::TelemetryWriter writer(tel.string(), fp);
  const auto res = decoder::train_decoder(systems, dcfg, std::ref(writer));
  io::Checkpoint ck = io::decoder_checkpoint(res.model, res.zeta, fp);
  ck.meta["variant"] = decoder::to_string(dcfg.variant);
  const fs::path path = out / "decoder.ckpt";
  io::save_checkpoint(path.string(), ck);
  emit({{"checkpoint", path.string()},
        {"telemetry", tel.string()},
        {"fingerprint", fp},
        {"variant", decoder::to_string(dcfg.variant)},
        {"systems", data.size()},
        {"epochs", res.history.size()},
        {"best_epoch", res.best_epoch},
        {"early_stopped", res.early_stopped},
        {"val_loss", res.history.at(res.best_epoch).val_loss},
        {"parameters", enc.params.count() + res.model.param_count()}});
}

// ---------------------------------------------------------------- adapt

struct AdaptOpts {
  std::string config, encoder, checkpoint, system_file, out;
  std::size_t index = 0;
};

decoder::Variant variant_of(const io::Checkpoint& ck) {
  return ck.meta.contains("variant") ? decoder::parse_variant(ck.meta.at("variant").get<std::string>())
                                     : decoder::Variant::meta_attention;
}

void cmd_adapt(const AdaptOpts& o) {
  const io::RunConfig c = load(o.config);
  const std::string fp = io::fingerprint(c);
  const auto& e = c.experiment;
  const auto tr = io::read_trajectory(o.system_file).traj;
  const auto enc_global = io::encoder_from_checkpoint(io::load_checkpoint(o.encoder));
  const auto enc = encoder::adapted_encoder(enc_global, tr, e.encoder_adapt_steps, e.encoder_adapt_lr,
                                            e.encoder.adapt_fraction);
  const auto esplit = encoder::make_split(tr.steps(), e.encoder.adapt_fraction);
  json summary = {{"system", tr.system_id},
                  {"fingerprint", fp},
                  {"encoder_pre_mse", encoder::forward_mse(enc_global, tr, esplit.meta_begin, esplit.meta_end)},
                  {"encoder_adapted_mse", encoder::forward_mse(enc, tr, esplit.meta_begin, esplit.meta_end)}};
  const fs::path out(o.out);
  fs::create_directories(out);
  const fs::path enc_path = out / "adapted_encoder.ckpt";
  io::save_checkpoint(enc_path.string(), io::encoder_checkpoint(enc, fp));
  summary["encoder"] = enc_path.string();

  if (!o.checkpoint.empty()) {
    const io::Checkpoint dck = io::load_checkpoint(o.checkpoint);
    auto [model, zeta] = io::decoder_from_checkpoint(dck);
    decoder::DecoderConfig dcfg = e.decoder;
    dcfg.variant = variant_of(dck);
    const decoder::SystemData sys{&tr, encoder::encode_states(enc, tr)};
    const auto split = encoder::make_split(tr.steps(), dcfg.adapt_fraction);
    const auto meta = decoder::make_batch(tr, sys.latents, split.meta_begin, split.meta_end, model.context, model.hidden);
    const std::uint64_t zseed = datagen::substream_seed(c.seed, kZetaStream + o.index);
    ad::ParamTable pre = zeta;
    if (dcfg.variant == decoder::Variant::meta_attention) {
      std::mt19937_64 rng(zseed);
      pre = decoder::init_zeta(model, dcfg.zeta_init_std, rng);
    }
    const decoder::TrainResult trained{model, zeta, {}, 0, false};
    const auto adapted = decoder::adapt_for_system(trained, sys, dcfg, zseed);
    io::Checkpoint ack = io::decoder_checkpoint(adapted.model, adapted.zeta, fp);
    ack.meta["variant"] = decoder::to_string(dcfg.variant);
    ack.meta["system"] = tr.system_id;
    const fs::path dec_path = out / "adapted_decoder.ckpt";
    io::save_checkpoint(dec_path.string(), ack);
    summary["decoder"] = dec_path.string();
    summary["variant"] = decoder::to_string(dcfg.variant);
    summary["decoder_pre_mse"] = decoder::batch_loss(model, pre, meta);
    summary["decoder_adapted_mse"] = decoder::batch_loss(adapted.model, adapted.zeta, meta);
  }
  emit(summary);
}

// ---------------------------------------------------------------- rollout

struct ModelOpts {
  std::string encoder, checkpoint;
};

rollout::Model load_model(const ModelOpts& o) {
  if (o.encoder.empty()) throw ConfigError("--encoder is required", "encoder");
  rollout::Model m;
  m.encoder = io::encoder_from_checkpoint(io::load_checkpoint(o.encoder));
  m.use_decoder = !o.checkpoint.empty();
  if (m.use_decoder) std::tie(m.decoder, m.zeta) = io::decoder_from_checkpoint(io::load_checkpoint(o.checkpoint));
  return m;
}

struct RolloutOpts {
  ModelOpts model;
  std::string config, system_file, out;
  std::size_t horizon = 0;
  std::optional<std::size_t> start;
};

void cmd_rollout(const RolloutOpts& o) {
  const auto tr = io::read_trajectory(o.system_file);
  const rollout::Model model = load_model(o.model);
  const std::size_t c = model.context();
  std::size_t start = 0;
  if (o.start) {
    start = *o.start;
  } else {
    // Default: the first prediction lands rollout_offset transitions into the meta split.
    if (o.config.empty()) throw ConfigError("--start or --config is required", "start");
    const io::RunConfig cfg = load(o.config);
    const auto split = encoder::make_split(tr.traj.steps(), cfg.experiment.decoder.adapt_fraction);
    const std::size_t p = split.meta_begin + cfg.experiment.rollout_offset;
    if (p < c) throw ConfigError("rollout offset is smaller than the context window", "evaluation.rollout_offset");
    start = p - c;
  }
  if (o.horizon == 0) throw ConfigError("--horizon must be positive", "horizon");
  const std::size_t first = start + c;
  if (first + o.horizon > tr.traj.steps())
    throw ConfigError("rollout of " + std::to_string(o.horizon) + " steps from " + std::to_string(first) +
                          " runs past the " + std::to_string(tr.traj.steps()) + " recorded states",
                      "horizon");
  const auto r = rollout::rollout_from(model, tr.traj, start, o.horizon);
  const auto truth = rollout::segment(tr.traj, first, o.horizon);
  const auto pers = rollout::evaluate_rollout(rollout::persistence(tr.traj.state(first - 1), o.horizon), truth);
  json summary = {{"system", tr.traj.system_id},
                  {"first_predicted", first},
                  {"horizon", o.horizon},
                  {"predicted", r.states.size()},
                  {"halted", r.halted},
                  {"persistence_mse", pers.mse},
                  {"decoder", model.use_decoder}};
  if (r.halted) {
    summary["message"] = r.message;
    summary["mse"] = std::numeric_limits<double>::infinity();
  } else {
    const auto m = rollout::evaluate_rollout(r.states, truth);
    summary["mse"] = m.mse;
    summary["per_coordinate"] = m.per_coordinate;
  }
  if (!o.out.empty() && !r.states.empty()) {
    datagen::Trajectory pred;
    pred.system_id = tr.traj.system_id + "-rollout";
    pred.generator = tr.traj.generator;
    pred.d = tr.traj.d;
    pred.m = tr.traj.m;
    pred.dt = tr.traj.dt;
    pred.seed = tr.traj.seed;
    pred.params = tr.traj.params;
    const std::size_t d = tr.traj.d;
    for (std::size_t i = 0; i < r.states.size(); ++i) {
      const auto& s = r.states[i];
      pred.push({s.begin(), s.begin() + static_cast<long>(d)}, {s.begin() + static_cast<long>(d), s.end()},
                tr.traj.control(first + i));
    }
    fresh_file(o.out);
    io::write_trajectory(o.out, pred, tr.fingerprint);
    summary["out"] = o.out;
  }
  // JSON has no infinity; a halted rollout reports null.
  if (!std::isfinite(summary["mse"].get<double>())) summary["mse"] = nullptr;
  emit(summary);
}

// ---------------------------------------------------------------- verify

struct VerifyOpts {
  ModelOpts model;
  std::string suite, system_file, reference;
  std::size_t points = 100;
  std::uint64_t seed = 0;
};

std::vector<rollout::State> sample_states(const datagen::Trajectory& tr, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, tr.steps() - 1);
  std::vector<rollout::State> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(tr.state(pick(rng)));
  return out;
}

std::vector<double> energies(const datagen::Trajectory& tr) {
  std::vector<double> e;
  const json& pr = tr.params;
  if (tr.generator == "oscillator") {
    datagen::OscillatorSystem s;
    s.mass = pr.at("mass").get<double>();
    s.k = pr.at("k").get<double>();
    for (std::size_t t = 0; t < tr.steps(); ++t) e.push_back(datagen::oscillator_energy(s, tr.q[t], tr.p[t]));
  } else if (tr.generator == "spring_mesh") {
    datagen::SpringMeshSystem s;
    s.nx = pr.at("nx").get<std::size_t>();
    s.ny = pr.at("ny").get<std::size_t>();
    s.mass = pr.at("mass").get<double>();
    s.k_spring = pr.at("k_spring").get<double>();
    s.fix_top = pr.at("fix_top").get<bool>();
    const std::size_t d = tr.d;
    for (std::size_t t = 0; t < tr.steps(); ++t) {
      const std::vector<double> q(tr.q.begin() + static_cast<long>(t * d), tr.q.begin() + static_cast<long>((t + 1) * d));
      const std::vector<double> p(tr.p.begin() + static_cast<long>(t * d), tr.p.begin() + static_cast<long>((t + 1) * d));
      e.push_back(datagen::spring_mesh_energy(s, q, p));
    }
  } else {
    throw ConfigError("no energy function for generator '" + tr.generator + "'", "system-file");
  }
  return e;
}

json drift_json(const verify::EnergyDrift& d) { return {{"max_relative", d.max_relative}, {"slope", d.slope}}; }

// Shoelace area of coordinate pair 0, the orbit of a one-degree-of-freedom system.
double area_of(const datagen::Trajectory& tr) {
  std::vector<double> q, p;
  for (std::size_t t = 0; t < tr.steps(); ++t) {
    q.push_back(tr.q[t * tr.d]);
    p.push_back(tr.p[t * tr.d]);
  }
  return verify::shoelace_area(q, p);
}

void cmd_verify(const VerifyOpts& o) {
  const auto tr = io::read_trajectory(o.system_file).traj;
  json summary = {{"suite", o.suite}, {"system", tr.system_id}};
  if (o.suite == "symplectic") {
    const auto m = load_model(o.model);
    const auto pts = sample_states(tr, o.points, o.seed);
    const auto a = verify::encoder_report(m.encoder, pts, tr.dt, verify::JacobianMode::analytic);
    const auto f = verify::encoder_report(m.encoder, pts, tr.dt, verify::JacobianMode::finite_diff);
    summary["points"] = pts.size();
    summary["analytic"] = {{"defect", a.defect}, {"det_dev", a.det_dev}};
    summary["finite_diff"] = {{"defect", f.defect}, {"det_dev", f.det_dev}};
    if (m.use_decoder) {
      const auto b = verify::perturbation_bound(m, pts, tr.dt, tr.m ? tr.control(0) : rollout::State{});
      summary["composed_defect"] = b.defect;
    }
  } else if (o.suite == "bound") {
    const auto m = load_model(o.model);
    if (!m.use_decoder) throw ConfigError("the bound suite needs a decoder --checkpoint", "checkpoint");
    const auto pts = sample_states(tr, o.points, o.seed);
    const rollout::State u = tr.m ? tr.control(0) : rollout::State{};
    const auto b = verify::perturbation_bound(m, pts, tr.dt, u);
    json sweep = json::array();
    for (const auto& s : verify::scaling_sweep(m, pts, tr.dt, {0.5, 1.0, 2.0}, u))
      sweep.push_back({{"scale", s.scale}, {"rho_hat", s.rho_hat}, {"defect", s.defect}});
    summary["points"] = pts.size();
    summary["rho_hat"] = b.rho_hat;
    summary["defect"] = b.defect;
    summary["c_hat"] = b.c_hat;
    summary["sweep"] = sweep;
  } else if (o.suite == "energy") {
    summary["drift"] = drift_json(verify::energy_drift(energies(tr)));
    if (!o.reference.empty())
      summary["reference_drift"] = drift_json(verify::energy_drift(energies(io::read_trajectory(o.reference).traj)));
  } else if (o.suite == "area") {
    const double a = area_of(tr);
    summary["area"] = a;
    if (!o.reference.empty()) {
      const double ref = area_of(io::read_trajectory(o.reference).traj);
      summary["reference_area"] = ref;
      summary["relative_deviation"] = std::abs(a - ref) / std::abs(ref);
    }
  } else {
    throw ConfigError("unknown verify suite '" + o.suite + "'", "suite");
  }
  emit(summary);
}

// ---------------------------------------------------------------- ablate / run

struct AblateOpts {
  std::string config, suite, out;
  std::vector<std::uint64_t> seeds;
};

void cmd_ablate(const AblateOpts& o) {
  const io::RunConfig c = load(o.config);
  const auto seeds = o.seeds.empty() ? c.seeds : o.seeds;
  const auto rows = verify::run_ablation(o.suite, c.experiment, seeds);
  json j = {{"suite", o.suite}, {"fingerprint", io::fingerprint(c)}, {"seeds", seeds}, {"rows", json::array()}};
  for (const auto& r : rows) j["rows"].push_back(verify::to_json(r));
  if (!o.out.empty()) {
    fresh_file(o.out);
    std::ofstream(o.out) << j.dump(2) << "\n";
  }
  emit(j);
}

struct RunOpts {
  std::string config, out;
};

void cmd_run(const RunOpts& o) {
  const io::RunConfig c = load(o.config);
  const auto r = verify::run_experiment(c.experiment, c.seed);
  json j = {{"fingerprint", io::fingerprint(c)},
            {"seed", c.seed},
            {"parameters", r.run.param_count},
            {"mean_pre_mse", r.mean_pre},
            {"mean_adapted_mse", r.mean_adapted},
            {"mean_rollout_mse", r.mean_rollout},
            {"mean_encoder_rollout_mse", r.mean_encoder_rollout},
            {"mean_persistence_mse", r.mean_persistence},
            {"systems", json::array()}};
  if (c.experiment.with_mlp) {
    j["mlp_parameters"] = r.mlp_params;
    j["mean_mlp_rollout_mse"] = r.mean_mlp_rollout;
  }
  for (const auto& s : r.run.scores) j["systems"].push_back(verify::to_json(s));
  if (!o.out.empty()) {
    fresh_file(o.out);
    std::ofstream(o.out) << j.dump(2) << "\n";
  }
  emit(j);
}

// ---------------------------------------------------------------- errors

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const IoError*>(&e)) return "IoError";
  if (dynamic_cast<const ShapeError*>(&e)) return "ShapeError";
  if (dynamic_cast<const NonFiniteError*>(&e)) return "NonFiniteError";
  if (dynamic_cast<const DivergenceError*>(&e)) return "DivergenceError";
  if (dynamic_cast<const TruncationError*>(&e)) return "TruncationError";
  if (dynamic_cast<const SimulationError*>(&e)) return "SimulationError";
  if (dynamic_cast<const Error*>(&e)) return "Error";
  if (dynamic_cast<const json::exception*>(&e)) return "FormatError";
  return "InternalError";
}

int report(const std::string& type, const std::string& message, const std::string& key, int code) {
  json err = {{"type", type}, {"message", message}};
  if (!key.empty()) err["key"] = key;
  std::cerr << json{{"error", err}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MetaSym: symplectic meta-learning for physical dynamics"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  ConfigOpts config_o;
  auto* config_c = app.add_subcommand("config", "Write a preset run configuration");
  config_c->add_option("--preset", config_o.preset_name, "Preset name")
      ->required()
      ->check(CLI::IsMember(io::preset_names()));
  config_c->add_option("--out", config_o.out, "Output file; stdout when omitted");

  GenerateOpts gen_o;
  auto* gen_c = app.add_subcommand("generate", "Generate trajectory files and a manifest");
  gen_c->add_option("--config", gen_o.config, "Take table, count, seed and sizes from a run configuration");
  gen_c->add_option("--split", gen_o.split, "With --config: train or test systems")->capture_default_str();
  gen_c->add_option("--system", gen_o.system, "System family")->check(CLI::IsMember({"spring", "oscillator", "quantum"}));
  gen_c->add_option("--table", gen_o.table, "Parameter table")->check(CLI::IsMember(datagen::table_ids()));
  gen_c->add_option("--count", gen_o.count, "Number of systems");
  gen_c->add_option("--seed", gen_o.seed, "Master seed");
  gen_c->add_option("--out", gen_o.out, "Output directory")->required();
  gen_c->add_option("--steps", gen_o.steps, "Recorded states per system (default: the table's)");
  gen_c->add_option("--nx", gen_o.nx, "Mesh width");
  gen_c->add_option("--ny", gen_o.ny, "Mesh height");
  gen_c->add_option("--fock-dim", gen_o.fock_dim, "Fock truncation");
  gen_c->add_option("--noise", gen_o.noise, "Standard deviation of additive observation noise");

  TrainEncoderOpts te_o;
  auto* te_c = app.add_subcommand("train-encoder", "Meta-train the symplectic encoder");
  te_c->add_option("--config", te_o.config, "Run configuration")->required();
  te_c->add_option("--data", te_o.data, "Directory of training trajectories")->required();
  te_c->add_option("--out", te_o.out, "Output directory")->required();

  TrainDecoderOpts td_o;
  auto* td_c = app.add_subcommand("train-decoder", "Train the meta-attention decoder on encoder latents");
  td_c->add_option("--config", td_o.config, "Run configuration")->required();
  td_c->add_option("--data", td_o.data, "Directory of training trajectories")->required();
  td_c->add_option("--encoder", td_o.encoder, "Encoder checkpoint")->required();
  td_c->add_option("--out", td_o.out, "Output directory")->required();
  td_c->add_flag("--no-meta-attention", td_o.no_meta_attention, "Train the variant without meta-attention");
  td_c->add_flag("--finetune-only", td_o.finetune_only, "Train the fine-tune-only variant");

  AdaptOpts ad_o;
  auto* ad_c = app.add_subcommand("adapt", "Adapt encoder and decoder to one system");
  ad_c->add_option("--config", ad_o.config, "Run configuration")->required();
  ad_c->add_option("--encoder", ad_o.encoder, "Encoder checkpoint")->required();
  ad_c->add_option("--checkpoint", ad_o.checkpoint, "Decoder checkpoint; encoder only when omitted");
  ad_c->add_option("--system-file", ad_o.system_file, "Trajectory of the system to adapt to")->required();
  ad_c->add_option("--out", ad_o.out, "Output directory")->required();
  ad_c->add_option("--index", ad_o.index, "System index selecting the local-parameter seed")->capture_default_str();

  RolloutOpts ro_o;
  auto* ro_c = app.add_subcommand("rollout", "Autoregressive rollout against a recorded trajectory");
  ro_c->add_option("--encoder", ro_o.model.encoder, "Encoder checkpoint")->required();
  ro_c->add_option("--checkpoint", ro_o.model.checkpoint, "Decoder checkpoint; encoder only when omitted");
  ro_c->add_option("--system-file", ro_o.system_file, "Ground-truth trajectory")->required();
  ro_c->add_option("--horizon", ro_o.horizon, "Number of predicted states")->required();
  ro_c->add_option("--start", ro_o.start, "Index of the first seed state");
  ro_c->add_option("--config", ro_o.config, "Run configuration, for the default start");
  ro_c->add_option("--out", ro_o.out, "Write the predicted states as a trajectory file");

  VerifyOpts ve_o;
  auto* ve_c = app.add_subcommand("verify", "Geometric checks");
  ve_c->add_option("--suite", ve_o.suite, "Check to run")
      ->required()
      ->check(CLI::IsMember({"symplectic", "bound", "energy", "area"}));
  ve_c->add_option("--system-file", ve_o.system_file, "Trajectory: sample states or a rollout to score")->required();
  ve_c->add_option("--encoder", ve_o.model.encoder, "Encoder checkpoint (symplectic, bound)");
  ve_c->add_option("--checkpoint", ve_o.model.checkpoint, "Decoder checkpoint (bound)");
  ve_c->add_option("--reference", ve_o.reference, "Reference trajectory (energy, area)");
  ve_c->add_option("--points", ve_o.points, "Sampled states")->capture_default_str();
  ve_c->add_option("--seed", ve_o.seed, "Sampling seed")->capture_default_str();

  AblateOpts ab_o;
  auto* ab_c = app.add_subcommand("ablate", "Ablation suites over several seeds");
  ab_c->add_option("--config", ab_o.config, "Run configuration")->required();
  ab_c->add_option("--suite", ab_o.suite, "Suite")->required()->check(CLI::IsMember(verify::ablation_suites()));
  ab_c->add_option("--seeds", ab_o.seeds, "Seeds; the configuration's when omitted");
  ab_c->add_option("--out", ab_o.out, "Write the result as JSON");

  RunOpts run_o;
  auto* run_c = app.add_subcommand("run", "Whole pipeline in one process for the configuration's seed");
  run_c->add_option("--config", run_o.config, "Run configuration")->required();
  run_c->add_option("--out", run_o.out, "Write the result as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("UsageError", e.what(), "", 2);
  }

  try {
    if (*config_c) cmd_config(config_o);
    else if (*gen_c) cmd_generate(gen_o);
    else if (*te_c) cmd_train_encoder(te_o);
    else if (*td_c) cmd_train_decoder(td_o);
    else if (*ad_c) cmd_adapt(ad_o);
    else if (*ro_c) cmd_rollout(ro_o);
    else if (*ve_c) cmd_verify(ve_o);
    else if (*ab_c) cmd_ablate(ab_o);
    else if (*run_c) cmd_run(run_o);
  } catch (const ConfigError& e) {
    return report("ConfigError", e.what(), e.key(), 1);
  } catch (const std::exception& e) {
    return report(error_type(e), e.what(), "", 1);
  }
  return 0;
}
