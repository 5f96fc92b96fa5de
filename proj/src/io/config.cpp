#include "metasym/io/config.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>

#include "metasym/error.hpp"

namespace metasym::io {
namespace {

using nlohmann::json;

// Reads keys of one JSON object, remembering which were consumed so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config key '" + where("") + "' must be an object", where(""));
  }

  const json& raw(const std::string& key) {
    const std::string full = where(key);
    if (!j_.contains(key)) throw ConfigError("missing config key '" + full + "'", full);
    seen_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError("config key '" + where(key) + "' must be a number", where(key));
    return v.get<double>();
  }

  std::uint64_t count(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw ConfigError("config key '" + where(key) + "' must be a non-negative integer", where(key));
    return v.get<std::uint64_t>();
  }

  bool flag(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError("config key '" + where(key) + "' must be true or false", where(key));
    return v.get<bool>();
  }

  std::string text(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError("config key '" + where(key) + "' must be a string", where(key));
    return v.get<std::string>();
  }

  Section section(const std::string& key) { return Section(raw(key), where(key)); }

  std::string where(const std::string& key) const {
    if (path_.empty()) return key;
    return key.empty() ? path_ : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + where(key) + "'", where(key));
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& key, const std::string& rule) {
  if (!ok) throw ConfigError("config key '" + key + "' " + rule, key);
}

bool fraction(double v) { return v > 0.0 && v < 1.0; }

}  // namespace

json to_json(const RunConfig& c) {
  const auto& x = c.experiment;
  const auto& e = x.encoder;
  const auto& d = x.decoder;
  return {
      {"seed", c.seed},
      {"seeds", c.seeds},
      {"data",
       {{"train_table", x.train_table},
        {"train_count", x.train_count},
        {"test_table", x.test_table},
        {"test_count", x.test_count},
        {"steps", x.sample.steps},
        {"nx", x.sample.nx},
        {"ny", x.sample.ny},
        {"fock_dim", x.sample.fock_dim},
        {"noise", x.noise}}},
      {"encoder",
       {{"layers", e.blocks},
        {"activation", symp::to_string(e.activation)},
        {"outer_lr", e.outer_lr},
        {"inner_lr", e.inner_lr},
        {"inner_steps", e.inner_steps},
        {"weight_decay", e.weight_decay},
        {"dropconnect", e.dropconnect},
        {"batch_size", e.batch_size},
        {"epochs", e.epochs},
        {"patience", e.patience},
        {"adapt_fraction", e.adapt_fraction},
        {"train_fraction", e.train_fraction}}},
      {"decoder",
       {{"variant", decoder::to_string(d.variant)},
        {"heads", d.heads},
        {"hidden", d.hidden},
        {"context", d.context},
        {"outer_lr", d.outer_lr},
        {"inner_lr", d.inner_lr},
        {"inner_steps", d.inner_steps},
        {"dropout", d.dropout},
        {"weight_decay", d.weight_decay},
        {"zeta_init_std", d.zeta_init_std},
        {"batch_size", d.batch_size},
        {"epochs", d.epochs},
        {"patience", d.patience},
        {"adapt_fraction", d.adapt_fraction},
        {"train_fraction", d.train_fraction},
        {"per_system_updates", d.per_system_updates}}},
      {"evaluation",
       {{"encoder_adapt_steps", x.encoder_adapt_steps},
        {"encoder_adapt_lr", x.encoder_adapt_lr},
        {"rollout_offset", x.rollout_offset},
        {"horizon", x.horizon},
        {"with_mlp", x.with_mlp}}},
      {"mlp", {{"lr", x.mlp.lr}, {"weight_decay", x.mlp.weight_decay}, {"epochs", x.mlp.epochs}}},
      {"paths", {{"data", c.data_dir}, {"out", c.out_dir}}},
  };
}

bool operator==(const RunConfig& a, const RunConfig& b) { return to_json(a) == to_json(b); }

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  c.seed = root.count("seed");
  const json& seeds = root.raw("seeds");
  if (!seeds.is_array()) throw ConfigError("config key 'seeds' must be a list of integers", "seeds");
  c.seeds.clear();
  for (const auto& s : seeds) {
    if (!s.is_number_unsigned()) throw ConfigError("config key 'seeds' must be a list of integers", "seeds");
    c.seeds.push_back(s.get<std::uint64_t>());
  }

  auto& x = c.experiment;
  {
    Section s = root.section("data");
    x.train_table = s.text("train_table");
    x.train_count = s.count("train_count");
    x.test_table = s.text("test_table");
    x.test_count = s.count("test_count");
    x.sample.steps = s.count("steps");
    x.sample.nx = s.count("nx");
    x.sample.ny = s.count("ny");
    x.sample.fock_dim = s.count("fock_dim");
    x.noise = s.number("noise");
    s.finish();
  }
  {
    Section s = root.section("encoder");
    auto& e = x.encoder;
    e.blocks = s.count("layers");
    const std::string act = s.text("activation");
    try {
      e.activation = symp::parse_nonlinearity(act);
    } catch (const Error&) {
      throw ConfigError("config key 'encoder.activation' must be tanh or sigmoid", "encoder.activation");
    }
    e.outer_lr = s.number("outer_lr");
    e.inner_lr = s.number("inner_lr");
    e.inner_steps = s.count("inner_steps");
    e.weight_decay = s.number("weight_decay");
    e.dropconnect = s.number("dropconnect");
    e.batch_size = s.count("batch_size");
    e.epochs = s.count("epochs");
    e.patience = s.count("patience");
    e.adapt_fraction = s.number("adapt_fraction");
    e.train_fraction = s.number("train_fraction");
    s.finish();
  }
  {
    Section s = root.section("decoder");
    auto& d = x.decoder;
    const std::string variant = s.text("variant");
    try {
      d.variant = decoder::parse_variant(variant);
    } catch (const Error&) {
      throw ConfigError(
          "config key 'decoder.variant' must be meta_attention, no_meta_attention or finetune_only", "decoder.variant");
    }
    d.heads = s.count("heads");
    d.hidden = s.count("hidden");
    d.context = s.count("context");
    d.outer_lr = s.number("outer_lr");
    d.inner_lr = s.number("inner_lr");
    d.inner_steps = s.count("inner_steps");
    d.dropout = s.number("dropout");
    d.weight_decay = s.number("weight_decay");
    d.zeta_init_std = s.number("zeta_init_std");
    d.batch_size = s.count("batch_size");
    d.epochs = s.count("epochs");
    d.patience = s.count("patience");
    d.adapt_fraction = s.number("adapt_fraction");
    d.train_fraction = s.number("train_fraction");
    d.per_system_updates = s.flag("per_system_updates");
    s.finish();
  }
  {
    Section s = root.section("evaluation");
    x.encoder_adapt_steps = s.count("encoder_adapt_steps");
    x.encoder_adapt_lr = s.number("encoder_adapt_lr");
    x.rollout_offset = s.count("rollout_offset");
    x.horizon = s.count("horizon");
    x.with_mlp = s.flag("with_mlp");
    s.finish();
  }
  {
    Section s = root.section("mlp");
    x.mlp.lr = s.number("lr");
    x.mlp.weight_decay = s.number("weight_decay");
    x.mlp.epochs = s.count("epochs");
    s.finish();
  }
  {
    Section s = root.section("paths");
    c.data_dir = s.text("data");
    c.out_dir = s.text("out");
    s.finish();
  }
  root.finish();
  validate(c);
  return c;
}

void validate(const RunConfig& c) {
  const auto& x = c.experiment;
  const auto tables = datagen::table_ids();
  const auto known = [&](const std::string& t) { return std::find(tables.begin(), tables.end(), t) != tables.end(); };
  require(!c.seeds.empty(), "seeds", "must list at least one seed");
  require(known(x.train_table), "data.train_table", "names an unknown parameter table");
  require(known(x.test_table), "data.test_table", "names an unknown parameter table");
  require(x.train_table[0] == x.test_table[0], "data.test_table", "must describe the same kind of system as the training table");
  require(x.train_count >= 1, "data.train_count", "must be at least 1");
  require(x.test_count >= 1, "data.test_count", "must be at least 1");
  require(x.sample.steps == 0 || x.sample.steps >= 10, "data.steps", "must be 0 (table default) or at least 10");
  require(x.sample.nx >= 2 && x.sample.nx <= 32, "data.nx", "must lie in [2, 32]");
  require(x.sample.ny >= 2 && x.sample.ny <= 32, "data.ny", "must lie in [2, 32]");
  require(x.sample.fock_dim >= 3 && x.sample.fock_dim <= 200, "data.fock_dim", "must lie in [3, 200]");
  require(x.noise >= 0.0, "data.noise", "must be non-negative");

  const auto& e = x.encoder;
  require(e.blocks >= 1 && e.blocks <= 12, "encoder.layers", "must lie in [1, 12]");
  require(e.outer_lr > 0.0 && e.outer_lr <= 1.0, "encoder.outer_lr", "must lie in (0, 1]");
  require(e.inner_lr >= 0.0 && e.inner_lr <= 1.0, "encoder.inner_lr", "must lie in [0, 1]");
  require(e.inner_steps <= 1000, "encoder.inner_steps", "must be at most 1000");
  require(e.weight_decay >= 0.0 && e.weight_decay < 1.0, "encoder.weight_decay", "must lie in [0, 1)");
  require(e.dropconnect >= 0.0 && e.dropconnect < 1.0, "encoder.dropconnect", "must lie in [0, 1)");
  require(e.batch_size >= 1, "encoder.batch_size", "must be at least 1");
  require(e.epochs >= 1, "encoder.epochs", "must be at least 1");
  require(e.patience >= 1, "encoder.patience", "must be at least 1");
  require(fraction(e.adapt_fraction), "encoder.adapt_fraction", "must lie in (0, 1)");
  require(fraction(e.train_fraction), "encoder.train_fraction", "must lie in (0, 1)");

  const auto& d = x.decoder;
  require(d.heads >= 1 && d.heads <= 64, "decoder.heads", "must lie in [1, 64]");
  require(d.hidden == 0 || d.hidden % d.heads == 0, "decoder.hidden", "must be 0 (automatic) or a multiple of heads");
  require(d.context >= 1, "decoder.context", "must be at least 1");
  require(d.outer_lr > 0.0 && d.outer_lr <= 1.0, "decoder.outer_lr", "must lie in (0, 1]");
  require(d.inner_lr >= 0.0 && d.inner_lr <= 1.0, "decoder.inner_lr", "must lie in [0, 1]");
  require(d.inner_steps <= 1000, "decoder.inner_steps", "must be at most 1000");
  require(d.dropout >= 0.0 && d.dropout < 1.0, "decoder.dropout", "must lie in [0, 1)");
  require(d.weight_decay >= 0.0 && d.weight_decay < 1.0, "decoder.weight_decay", "must lie in [0, 1)");
  require(d.zeta_init_std >= 0.0, "decoder.zeta_init_std", "must be non-negative");
  require(d.batch_size >= 1, "decoder.batch_size", "must be at least 1");
  require(d.epochs >= 1, "decoder.epochs", "must be at least 1");
  require(d.patience >= 1, "decoder.patience", "must be at least 1");
  require(fraction(d.adapt_fraction), "decoder.adapt_fraction", "must lie in (0, 1)");
  require(fraction(d.train_fraction), "decoder.train_fraction", "must lie in (0, 1)");

  require(x.encoder_adapt_lr >= 0.0 && x.encoder_adapt_lr <= 1.0, "evaluation.encoder_adapt_lr", "must lie in [0, 1]");
  require(x.rollout_offset >= d.context, "evaluation.rollout_offset", "must be at least decoder.context");
  require(x.horizon >= 1, "evaluation.horizon", "must be at least 1");
  require(x.mlp.lr > 0.0 && x.mlp.lr <= 1.0, "mlp.lr", "must lie in (0, 1]");
  require(x.mlp.weight_decay >= 0.0 && x.mlp.weight_decay < 1.0, "mlp.weight_decay", "must lie in [0, 1)");
  require(x.mlp.epochs >= 1, "mlp.epochs", "must be at least 1");
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::string& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file '" + path + "'");
  out << to_json(config).dump(2) << "\n";
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

std::string fingerprint(const RunConfig& config) { return fnv1a_hex(to_json(config).dump()); }

std::vector<std::string> preset_names() {
  return {"spring", "quantum", "desk-spring", "desk-quantum", "desk-oscillator", "smoke"};
}

RunConfig preset(const std::string& name) {
  RunConfig c;
  auto& x = c.experiment;
  auto& e = x.encoder;
  auto& d = x.decoder;
  // Spring-mesh table: encoder 1e-3 / 3e-3, K = 3, DropConnect 0.1, 3 layers,
  // patience 110; decoder 7e-3 / 1e-2, K = 10, c = 30, dropout 0.1, 4 heads,
  // patience 312; splits 80/20 and 30/70.
  e.blocks = 3;
  e.outer_lr = 1e-3;
  e.inner_lr = 3e-3;
  e.inner_steps = 3;
  e.dropconnect = 0.1;
  e.patience = 110;
  e.epochs = 1000;
  d.heads = 4;
  d.context = 30;
  d.outer_lr = 7e-3;
  d.inner_lr = 1e-2;
  d.inner_steps = 10;
  d.dropout = 0.1;
  d.patience = 312;
  d.epochs = 1000;
  x.train_table = "2a";
  x.test_table = "2b";
  x.train_count = 20;
  x.test_count = 5;
  x.sample.steps = 0;
  x.encoder_adapt_steps = e.inner_steps;
  x.encoder_adapt_lr = e.inner_lr;

  auto quantum_table = [&] {
    // Quantum table: decoder 8e-3 / 3e-2, K = 15, dropout 0.2 on both sides,
    // patience 294 (encoder) and 354 (decoder).
    e.dropconnect = 0.2;
    e.patience = 294;
    d.outer_lr = 8e-3;
    d.inner_lr = 3e-2;
    d.inner_steps = 15;
    d.dropout = 0.2;
    d.patience = 354;
    x.train_table = "3a";
    x.test_table = "3b";
  };

  if (name == "spring") return c;
  if (name == "quantum") {
    quantum_table();
    return c;
  }
  if (name == "desk-spring") {
    // Single-CPU scale: 3x3 mesh, 300 steps, short schedules. The encoder
    // needs a larger step to converge in 60 epochs and the decoder a smaller
    // one because its targets are tiny residuals.
    x.test_table = "2a";
    x.sample.steps = 300;
    e.outer_lr = 5e-3;
    e.epochs = 60;
    d.outer_lr = 1e-3;
    d.epochs = 30;
    x.rollout_offset = 30;
    x.horizon = 100;
    return c;
  }
  if (name == "desk-quantum") {
    quantum_table();
    x.test_table = "3a";
    x.train_count = 10;
    x.test_count = 3;
    x.sample.steps = 100;
    e.epochs = 100;
    d.epochs = 100;
    x.rollout_offset = 30;
    x.horizon = 40;
    return c;
  }
  if (name == "desk-oscillator") {
    x.train_table = "8in";
    x.test_table = "8out";
    x.train_count = 10;
    x.test_count = 1;
    x.sample.steps = 1000;
    e.outer_lr = 5e-3;
    e.epochs = 60;
    d.outer_lr = 1e-3;
    d.epochs = 20;
    d.context = 10;
    x.rollout_offset = 10;
    x.horizon = 600;
    // The out-of-distribution system lies well outside the training range;
    // the per-system encoder fit converges slowly, so adapt it to convergence.
    x.encoder_adapt_steps = 3000;
    x.encoder_adapt_lr = 3e-2;
    return c;
  }
  if (name == "smoke") {
    x.train_table = "8in";
    x.test_table = "8out";
    x.train_count = 4;
    x.test_count = 1;
    x.sample.steps = 200;
    e.epochs = 5;
    d.epochs = 5;
    d.context = 10;
    x.rollout_offset = 10;
    x.horizon = 50;
    c.seeds = {1, 2};
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

}  // namespace metasym::io
