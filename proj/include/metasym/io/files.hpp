#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "metasym/autodiff/params.hpp"
#include "metasym/datagen/trajectory.hpp"
#include "metasym/decoder/decoder.hpp"
#include "metasym/sympnet/sympnet.hpp"

namespace metasym::io {

constexpr int kTrajectorySchema = 1;
constexpr std::uint32_t kCheckpointVersion = 1;

/// One JSON record per line: a header followed by T data records
/// {"t", "q", "p", "u"}. Doubles are printed in shortest round-trip form, so a
/// read after a write is bitwise identical.
void write_trajectory(const std::string& path, const datagen::Trajectory& traj, const std::string& fingerprint);

struct TrajectoryFile {
  datagen::Trajectory traj;
  std::string fingerprint;
};

/// Throws IoError on malformed files, a record count that differs from the
/// header's T, record widths that disagree with d and m, or non-finite values.
TrajectoryFile read_trajectory(const std::string& path);

/// Named tensors plus a kind tag ("encoder", "decoder", "mlp"), the config
/// fingerprint and free-form metadata.
struct Checkpoint {
  std::string kind;
  std::string fingerprint;
  nlohmann::json meta = nlohmann::json::object();
  ad::ParamTable tensors;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Little-endian binary: magic "MSYMCKPT", u32 version, then length-prefixed
/// kind, fingerprint and metadata JSON, u32 tensor count and per tensor a
/// length-prefixed name, u32 rank, u64 dims and f64 values.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

Checkpoint encoder_checkpoint(const symp::SympStack& stack, const std::string& fingerprint);
symp::SympStack encoder_from_checkpoint(const Checkpoint& ckpt);

/// Global and local tables share one tensor table; local names start with "zeta.".
Checkpoint decoder_checkpoint(const decoder::DecoderModel& model, const ad::ParamTable& zeta,
                              const std::string& fingerprint);
std::pair<decoder::DecoderModel, ad::ParamTable> decoder_from_checkpoint(const Checkpoint& ckpt);

/// Appends one JSON record per event, each stamped with the fingerprint.
class TelemetryWriter {
 public:
  TelemetryWriter(const std::string& path, std::string fingerprint);
  void operator()(const nlohmann::json& event);

 private:
  std::ofstream out_;
  std::string fingerprint_;
};

/// Manifest of a generated dataset: one entry per file with its sampled
/// parameters, plus the systems rejected for Fock truncation.
void write_manifest(const std::string& path, const std::string& fingerprint, const nlohmann::json& entries,
                    const nlohmann::json& rejected = nlohmann::json::array());
nlohmann::json read_json(const std::string& path);

}  // namespace metasym::io
