#include "metasym/io/files.hpp"

#include <bit>
#include <cmath>
#include <iterator>

#include "metasym/error.hpp"

namespace metasym::io {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'M', 'S', 'Y', 'M', 'C', 'K', 'P', 'T'};

json numbers(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) throw IoError("refusing to write a non-finite value");
  return v;
}

std::vector<double> read_numbers(const json& j, std::size_t width, const std::string& what, std::size_t line) {
  if (!j.is_array() || j.size() != width)
    throw IoError("record on line " + std::to_string(line) + ": '" + what + "' must hold " + std::to_string(width) +
                  " numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw IoError("record on line " + std::to_string(line) + ": '" + what + "' is not numeric");
    out.push_back(v.get<double>());
  }
  return out;
}

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw IoError("checkpoint is truncated");
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_trajectory(const std::string& path, const datagen::Trajectory& traj, const std::string& fingerprint) {
  traj.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trajectory file '" + path + "'");
  const json header = {{"record", "header"},  {"schema", kTrajectorySchema},
                       {"system_id", traj.system_id}, {"generator", traj.generator},
                       {"d", traj.d},         {"m", traj.m},
                       {"dt", traj.dt},       {"T", traj.steps()},
                       {"seed", traj.seed},   {"params", traj.params},
                       {"fingerprint", fingerprint}};
  out << header.dump() << "\n";
  for (std::size_t t = 0; t < traj.steps(); ++t) {
    const auto x = traj.point(t);
    const json rec = {{"t", t}, {"q", numbers(x.q)}, {"p", numbers(x.p)}, {"u", numbers(traj.control(t))}};
    out << rec.dump() << "\n";
  }
  if (!out) throw IoError("failed while writing trajectory file '" + path + "'");
}

TrajectoryFile read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("trajectory file '" + path + "' is empty");
  TrajectoryFile f;
  std::size_t steps = 0;
  try {
    const json h = json::parse(line);
    if (h.value("record", "") != "header") throw IoError("first record of '" + path + "' is not a header");
    if (h.at("schema").get<int>() != kTrajectorySchema)
      throw IoError("unsupported trajectory schema in '" + path + "'");
    auto& tr = f.traj;
    tr.system_id = h.at("system_id").get<std::string>();
    tr.generator = h.at("generator").get<std::string>();
    tr.d = h.at("d").get<std::size_t>();
    tr.m = h.at("m").get<std::size_t>();
    tr.dt = h.at("dt").get<double>();
    tr.seed = h.at("seed").get<std::uint64_t>();
    tr.params = h.at("params");
    steps = h.at("T").get<std::size_t>();
    f.fingerprint = h.at("fingerprint").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError("malformed header in '" + path + "': " + e.what());
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("malformed record on line " + std::to_string(lineno) + " of '" + path + "'");
    }
    const std::size_t t = f.traj.steps();
    if (!rec.contains("t") || rec.at("t") != t)
      throw IoError("record on line " + std::to_string(lineno) + " has the wrong time index");
    f.traj.push(read_numbers(rec.value("q", json()), f.traj.d, "q", lineno),
                read_numbers(rec.value("p", json()), f.traj.d, "p", lineno),
                read_numbers(rec.value("u", json()), f.traj.m, "u", lineno));
  }
  if (f.traj.steps() != steps)
    throw IoError("trajectory file '" + path + "' holds " + std::to_string(f.traj.steps()) + " records, header says " +
                  std::to_string(steps));
  try {
    f.traj.validate();
  } catch (const Error& e) {
    throw IoError("trajectory file '" + path + "': " + e.what());
  }
  return f;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kMagic), std::end(kMagic));
  w.u32(kCheckpointVersion);
  w.str(ckpt.kind);
  w.str(ckpt.fingerprint);
  w.str(ckpt.meta.dump());
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.shape()) w.u64(dim);
    for (double v : t.data()) w.f64(v);
  }
  return w.bytes;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
    throw IoError("not a checkpoint (bad magic)");
  const std::vector<std::uint8_t> body(bytes.begin() + 8, bytes.end());
  Reader r(body);
  if (r.u32() != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  Checkpoint c;
  c.kind = r.str();
  c.fingerprint = r.str();
  try {
    c.meta = json::parse(r.str());
  } catch (const json::exception&) {
    throw IoError("checkpoint metadata is not valid JSON");
  }
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    ad::Shape shape(rank);
    std::size_t size = 1;
    for (auto& dim : shape) {
      dim = r.u64();
      size *= dim;
    }
    std::vector<double> values(size);
    for (double& v : values) v = r.f64();
    c.tensors.set(name, ad::Tensor(shape, std::move(values)));
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed while writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint encoder_checkpoint(const symp::SympStack& stack, const std::string& fingerprint) {
  Checkpoint c{"encoder", fingerprint, {{"d", stack.d}, {"layers", json::array()}}, stack.params};
  for (const auto& l : stack.layers) {
    c.meta["layers"].push_back(
        {{"kind", symp::to_string(l.kind)}, {"fn", symp::to_string(l.fn)}, {"act", symp::to_string(l.act)}});
  }
  return c;
}

symp::SympStack encoder_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "encoder") throw IoError("checkpoint holds a " + ckpt.kind + ", not an encoder");
  symp::SympStack s;
  try {
    s.d = ckpt.meta.at("d").get<std::size_t>();
    for (const auto& l : ckpt.meta.at("layers")) {
      s.layers.push_back({symp::parse_kind(l.at("kind").get<std::string>()),
                          symp::parse_fn_kind(l.at("fn").get<std::string>()),
                          symp::parse_nonlinearity(l.at("act").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("encoder checkpoint metadata is incomplete: ") + e.what());
  }
  s.params = ckpt.tensors;
  return s;
}

Checkpoint decoder_checkpoint(const decoder::DecoderModel& model, const ad::ParamTable& zeta,
                              const std::string& fingerprint) {
  Checkpoint c{"decoder",
               fingerprint,
               {{"d", model.d}, {"m", model.m}, {"hidden", model.hidden}, {"heads", model.heads}, {"context", model.context}},
               model.global};
  c.tensors.merge(zeta);
  return c;
}

std::pair<decoder::DecoderModel, ad::ParamTable> decoder_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "decoder") throw IoError("checkpoint holds a " + ckpt.kind + ", not a decoder");
  decoder::DecoderModel m;
  try {
    m.d = ckpt.meta.at("d").get<std::size_t>();
    m.m = ckpt.meta.at("m").get<std::size_t>();
    m.hidden = ckpt.meta.at("hidden").get<std::size_t>();
    m.heads = ckpt.meta.at("heads").get<std::size_t>();
    m.context = ckpt.meta.at("context").get<std::size_t>();
  } catch (const json::exception& e) {
    throw IoError(std::string("decoder checkpoint metadata is incomplete: ") + e.what());
  }
  ad::ParamTable zeta;
  for (const auto& [name, t] : ckpt.tensors) {
    if (decoder::is_local(name))
      zeta.set(name, t);
    else
      m.global.set(name, t);
  }
  return {m, zeta};
}

TelemetryWriter::TelemetryWriter(const std::string& path, std::string fingerprint)
    : out_(path, std::ios::app), fingerprint_(std::move(fingerprint)) {
  if (!out_) throw IoError("cannot open telemetry file '" + path + "'");
}

void TelemetryWriter::operator()(const json& event) {
  json e = event;
  e["fingerprint"] = fingerprint_;
  out_ << e.dump() << "\n";
  out_.flush();
}

void write_manifest(const std::string& path, const std::string& fingerprint, const json& entries,
                    const json& rejected) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path + "'");
  out << json{{"fingerprint", fingerprint}, {"count", entries.size()}, {"files", entries}, {"rejected", rejected}}
                 .dump(2)
      << "\n";
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("'" + path + "' is not valid JSON: " + std::string(e.what()));
  }
}

}  // namespace metasym::io
