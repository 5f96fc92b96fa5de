// Acceptance criteria 1-11. `acceptance N` runs criterion N, no argument runs
// all of them. Each criterion prints exactly one PASS or FAIL line.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "metasym/datagen/datagen.hpp"
#include "metasym/decoder/decoder.hpp"
#include "metasym/encoder/encoder.hpp"
#include "metasym/io/config.hpp"
#include "metasym/rollout/rollout.hpp"
#include "metasym/sympnet/sympnet.hpp"
#include "metasym/verify/experiment.hpp"
#include "metasym/verify/verify.hpp"
#include "random_graph.hpp"

using namespace metasym;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

std::vector<rollout::State> gaussian_points(std::size_t d, std::size_t n, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<rollout::State> pts(n, rollout::State(2 * d));
  for (auto& x : pts)
    for (double& v : x) v = g(rng);
  return pts;
}

// ------------------------------------------------------------------ 1

Outcome symplecticity() {
  const auto cfg = io::preset("desk-spring").experiment;
  const auto corpus = verify::build_corpus(cfg, 1);
  encoder::EncoderConfig ecfg = cfg.encoder;
  ecfg.seed = datagen::substream_seed(1, 2);
  const std::size_t d = corpus.train.front().d;
  const double dt = corpus.train.front().dt;
  const auto pts = gaussian_points(d, 100, 1.0, 11);
  const auto before = encoder::make_encoder(d, ecfg).stack;
  const auto trained = encoder::train_encoder(corpus.train, ecfg).model.stack;
  const double b = verify::encoder_report(before, pts, dt, verify::JacobianMode::analytic).defect;
  const double a = verify::encoder_report(trained, pts, dt, verify::JacobianMode::analytic).defect;
  return {b <= 1e-8 && a <= 1e-8, "defect before " + fmt(b) + ", after training " + fmt(a) + " (<= 1e-8, d = " +
                                      std::to_string(d) + ", 100 points)"};
}

// ------------------------------------------------------------------ 2

Outcome reversibility() {
  double worst = 0.0;
  std::size_t stacks = 0;
  for (std::size_t d : {1, 3, 18}) {
    for (std::size_t depth = 1; depth <= 12; ++depth) {
      std::mt19937_64 rng(100 * d + depth);
      auto layers = symp::la_pattern(3);
      layers.resize(depth);
      symp::SympStack s = symp::make_stack(d, layers, rng);
      for (const auto& [name, t] : ad::ParamTable(s.params))
        s.params.set(name, testing::random_tensor(rng, t.rows(), t.cols(), 0.5));
      for (const auto& x : gaussian_points(d, 100, 1.0, depth)) {
        const auto pt = symp::PhasePoint::from_flat(x, 0.1);
        const auto back = symp::stack_inverse(symp::stack_forward(pt, s), s).flat();
        for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(back[i] - x[i]));
      }
      ++stacks;
    }
  }
  return {worst <= 1e-10, "max |inverse(forward(x)) - x| = " + fmt(worst) + " over " + std::to_string(stacks) +
                              " stacks of depth 1..12 (<= 1e-10)"};
}

// ------------------------------------------------------------------ 3

Outcome gradients() {
  const auto r = testing::check_random_graphs(100, 5000);
  return {r.max_rel <= 1e-4 && r.entries > 0,
          "max relative error " + fmt(r.max_rel) + " over " + std::to_string(r.entries) +
              " gradient entries of 100 random graphs (<= 1e-4)"};
}

// ------------------------------------------------------------------ 4

Outcome oscillator() {
  const io::RunConfig rc = io::preset("desk-oscillator");
  const auto& cfg = rc.experiment;
  const std::uint64_t seed = rc.seed;
  const auto corpus = verify::build_corpus(cfg, seed);
  const auto prepared = verify::prepare(cfg, corpus, seed);
  const auto run = verify::run_decoder(cfg, prepared, cfg.decoder, seed);
  const auto adapted =
      decoder::adapt_for_system(run.decoder, prepared.test_systems[0], cfg.decoder, datagen::substream_seed(seed, 100));
  const datagen::Trajectory& tr = corpus.test[0];
  const rollout::Model model{prepared.test_encoders[0], adapted.model, adapted.zeta, true};
  const std::size_t first = encoder::make_split(tr.steps(), cfg.decoder.adapt_fraction).meta_begin + cfg.rollout_offset;
  const std::size_t horizon = 600;
  if (first + horizon > tr.steps()) return {false, "test trajectory too short for a 600-step rollout"};
  const auto r = rollout::rollout_from(model, tr, first - model.context(), horizon);
  if (r.halted) return {false, "rollout halted: " + r.message};
  const auto truth = rollout::segment(tr, first, horizon);
  const double mse = rollout::evaluate_rollout(r.states, truth).mse;
  const double pers = rollout::evaluate_rollout(rollout::persistence(tr.state(first - 1), horizon), truth).mse;

  datagen::OscillatorSystem sys;
  sys.mass = tr.params.at("mass").get<double>();
  sys.k = tr.params.at("k").get<double>();
  // Drift is measured from the energy of the last observed state.
  std::vector<double> energy{datagen::oscillator_energy(sys, tr.state(first - 1)[0], tr.state(first - 1)[1])};
  std::vector<double> pq, pp, tq, tp;
  for (std::size_t i = 0; i < horizon; ++i) {
    energy.push_back(datagen::oscillator_energy(sys, r.states[i][0], r.states[i][1]));
    pq.push_back(r.states[i][0]);
    pp.push_back(r.states[i][1]);
    tq.push_back(truth[i][0]);
    tp.push_back(truth[i][1]);
  }
  const auto drift = verify::energy_drift(energy);
  const double area_pred = verify::shoelace_area(pq, pp), area_true = verify::shoelace_area(tq, tp);
  const double area_dev = std::abs(area_pred - area_true) / area_true;
  const bool a = mse < pers, b = std::abs(drift.slope) <= 1e-4, c = area_dev < 0.01;
  return {a && b && c, "(a) rollout MSE " + fmt(mse) + " vs persistence " + fmt(pers) + (a ? " ok" : " NOT below") +
                           "; (b) energy slope " + fmt(drift.slope) + "/step, max relative drift " +
                           fmt(drift.max_relative) + (b ? " ok" : " exceeds 1e-4") + "; (c) shoelace deviation " +
                           fmt(100.0 * area_dev) + "%" + (c ? " ok" : " exceeds 1%")};
}

// ------------------------------------------------------------------ 5

Outcome near_symplectic() {
  io::RunConfig rc = io::preset("desk-spring");
  auto cfg = rc.experiment;
  cfg.train_table = cfg.test_table = "2a-extreme";
  const std::uint64_t seed = rc.seed;
  const auto corpus = verify::build_corpus(cfg, seed);
  const auto prepared = verify::prepare(cfg, corpus, seed);
  decoder::DecoderConfig dcfg = cfg.decoder;
  dcfg.seed = datagen::substream_seed(seed, 3);
  const auto trained = decoder::train_decoder(prepared.train_systems, dcfg);
  const auto adapted =
      decoder::adapt_for_system(trained, prepared.test_systems[0], dcfg, datagen::substream_seed(seed, 100));
  const rollout::Model model{prepared.test_encoders[0], adapted.model, adapted.zeta, true};
  const auto& tr = corpus.test[0];
  std::vector<rollout::State> samples;
  for (std::size_t t = 0; t < tr.steps(); t += tr.steps() / 50) samples.push_back(tr.state(t));
  const auto bound = verify::perturbation_bound(model, samples, tr.dt);
  const auto sweep = verify::scaling_sweep(model, samples, tr.dt, {0.5, 1.0, 2.0});
  const double base = sweep[0].defect / sweep[0].rho_hat;
  bool linear = std::isfinite(base);
  std::string ratios;
  for (const auto& s : sweep) {
    const double ratio = s.defect / s.rho_hat;
    linear = linear && std::isfinite(ratio) && ratio <= 1.1 * base;
    ratios += (ratios.empty() ? "" : ", ") + fmt(s.scale) + ":" + fmt(ratio);
  }
  const bool bounded = std::isfinite(bound.defect) && bound.defect < 1.0;
  return {bounded && linear, "composed defect " + fmt(bound.defect) + " (< 1), rho_hat " + fmt(bound.rho_hat) +
                                 "; defect/rho_hat by scale " + ratios + " (each <= 1.1x the first)"};
}

// ------------------------------------------------------------------ 6-8, 10

std::string rows_text(const std::vector<verify::AblationRow>& rows) {
  std::string s;
  for (const auto& r : rows) s += (s.empty() ? "" : ", ") + r.variant + " " + fmt(r.mean) + " +- " + fmt(r.stddev);
  return s;
}

std::map<std::string, double> means(const std::vector<verify::AblationRow>& rows) {
  std::map<std::string, double> m;
  for (const auto& r : rows) m[r.variant] = r.mean;
  return m;
}

Outcome context_trend() {
  const auto rows = verify::run_ablation("table6", io::preset("desk-spring").experiment, kSeeds);
  bool ok = true;
  for (std::size_t i = 1; i < rows.size(); ++i) ok = ok && rows[i].mean >= rows[i - 1].mean;
  return {ok, "mean rollout MSE over 5 seeds by context: " + rows_text(rows) + " (non-decreasing required)"};
}

Outcome meta_attention() {
  const auto rows = verify::run_ablation("table5", io::preset("desk-spring").experiment, kSeeds);
  auto m = means(rows);
  const double meta = m.at("meta_attention"), none = m.at("no_meta_attention"), ft = m.at("finetune_only");
  return {meta < none && meta <= ft, "mean adapted MSE over 5 seeds: " + rows_text(rows) +
                                         " (meta-attention < no meta-attention and <= finetune-only)"};
}

Outcome conservative() {
  const auto rows = verify::run_ablation("conservative", io::preset("desk-spring").experiment, kSeeds);
  auto m = means(rows);
  return {m.at("adapted") < m.at("pre_adaptation"),
          "dissipative-trained decoder on conservative meshes, 5 seeds: " + rows_text(rows) + " (adapted < pre)"};
}

Outcome baseline() {
  const auto spring = verify::run_ablation("baseline", io::preset("desk-spring").experiment, kSeeds);
  const auto quantum = verify::run_ablation("baseline", io::preset("desk-quantum").experiment, kSeeds);
  auto s = means(spring), q = means(quantum);
  const bool a = s.at("metasym") < s.at("mlp"), b = q.at("metasym") < q.at("mlp");
  return {a && b, std::string("mean rollout MSE over 5 seeds. mesh: ") + rows_text(spring) + (a ? " ok" : " NOT below") +
                      ". quantum: " + rows_text(quantum) + (b ? " ok" : " NOT below")};
}

// ------------------------------------------------------------------ 9

Outcome sme_physics() {
  datagen::QuantumSystem s;
  s.fock_dim = 20;
  s.initial_fock = 3;
  s.eta = 1.0;
  s.nth = 0.0;
  s.chi = 0.0;
  s.beta = 0.0;
  s.steps = 20;
  const std::size_t runs = 500;
  std::vector<std::vector<double>> n(s.steps + 1);
  double trace_dev = 0.0;
  for (std::uint64_t seed = 0; seed < runs; ++seed) {
    datagen::QuantumDiagnostics dg;
    datagen::gen_quantum_sme(s, 7000 + seed, "fock", &dg);
    trace_dev = std::max(trace_dev, dg.max_trace_deviation);
    for (std::size_t k = 0; k < n.size() && k < dg.photon_number.size(); ++k) n[k].push_back(dg.photon_number[k]);
  }
  double worst_z = 0.0;
  std::size_t worst_k = 0;
  bool within = true;
  for (std::size_t k = 0; k < n.size(); ++k) {
    if (n[k].size() != runs) return {false, "missing photon-number samples"};
    double mean = 0.0, var = 0.0;
    for (double v : n[k]) mean += v;
    mean /= static_cast<double>(runs);
    for (double v : n[k]) var += (v - mean) * (v - mean);
    const double se = std::sqrt(var / static_cast<double>(runs - 1) / static_cast<double>(runs));
    const double expected = 3.0 * std::exp(-s.gamma * s.dt * static_cast<double>(k));
    const double dev = std::abs(mean - expected);
    if (se == 0.0) {
      within = within && dev <= 1e-12;
      continue;
    }
    if (dev / se > worst_z) {
      worst_z = dev / se;
      worst_k = k;
    }
    within = within && dev <= 3.0 * se;
  }
  return {within && trace_dev <= 1e-3,
          "500 runs from Fock 3, N = 20: largest |mean <n> - 3 exp(-gamma t)| is " + fmt(worst_z) +
              " standard errors (at t = " + fmt(s.dt * static_cast<double>(worst_k)) +
              ", <= 3 required); max pre-renormalization trace deviation " + fmt(trace_dev) + " (<= 1e-3)"};
}

// ------------------------------------------------------------------ 11

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Runs the CLI smoke pipeline in `dir` and returns every output file plus stdout.
std::map<std::string, std::string> smoke_run(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string m = METASYM_CLI, c = std::string(METASYM_SOURCE_DIR) + "/configs/smoke.json";
  const std::vector<std::string> steps = {
      "generate --config " + c + " --split train --out train",
      "generate --config " + c + " --split test --out test",
      "train-encoder --config " + c + " --data train --out model",
      "train-decoder --config " + c + " --data train --encoder model/encoder.ckpt --out model",
      "adapt --config " + c +
          " --encoder model/encoder.ckpt --checkpoint model/decoder.ckpt --system-file test/8out-0000.jsonl --out adapted",
      "rollout --config " + c +
          " --encoder adapted/adapted_encoder.ckpt --checkpoint adapted/adapted_decoder.ckpt"
          " --system-file test/8out-0000.jsonl --horizon 50 --out roll.jsonl",
      "verify --suite energy --system-file roll.jsonl"};
  std::size_t i = 0;
  for (const auto& s : steps) {
    const std::string cmd =
        "cd '" + dir.string() + "' && '" + m + "' " + s + " > stdout_" + std::to_string(i++) + ".json";
    if (std::system(cmd.c_str()) != 0) throw std::runtime_error("smoke step failed: " + s);
  }
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return files;
}

Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / "metasym_acceptance_determinism";
  const auto a = smoke_run(base / "a");
  const auto b = smoke_run(base / "b");
  std::size_t differing = 0, checkpoints = 0;
  for (const auto& [name, bytes] : a) {
    if (!b.count(name) || b.at(name) != bytes) ++differing;
    if (name.size() > 5 && name.substr(name.size() - 5) == ".ckpt") ++checkpoints;
  }
  const bool ok = differing == 0 && a.size() == b.size() && checkpoints == 4;
  fs::remove_all(base);
  return {ok, "two smoke-pipeline runs: " + std::to_string(a.size()) + " artifacts (" + std::to_string(checkpoints) +
                  " checkpoints, metrics on stdout), " + std::to_string(differing) + " differ bytewise"};
}

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {1, "symplecticity", symplecticity},
      {2, "time-reversibility", reversibility},
      {3, "gradient correctness", gradients},
      {4, "harmonic-oscillator reproduction", oscillator},
      {5, "near-symplectic bound", near_symplectic},
      {6, "context-window trend", context_trend},
      {7, "meta-attention ablation", meta_attention},
      {8, "conservative adaptation", conservative},
      {9, "SME generator physics", sme_physics},
      {10, "baseline ordering", baseline},
      {11, "determinism", determinism},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : criteria()) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail << " ["
              << fmt(secs) << " s]" << std::endl;
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
