#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "metasym/verify/experiment.hpp"

namespace metasym::io {

/// Everything a run needs. The JSON form has the sections "data", "encoder",
/// "decoder", "evaluation", "mlp" and "paths" plus top-level "seed" and
/// "seeds"; every key is required and unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};  // ablation seeds
  verify::ExperimentConfig experiment;
  std::string data_dir = "data";
  std::string out_dir = "out";
};

/// Equal when the JSON forms are equal.
bool operator==(const RunConfig& a, const RunConfig& b);

nlohmann::json to_json(const RunConfig& config);
/// Throws ConfigError naming the offending key.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& config);

/// Throws ConfigError when a value is outside its legal range.
void validate(const RunConfig& config);

/// FNV-1a 64 of the canonical (sorted, compact) JSON, as 16 hex digits.
std::string fingerprint(const RunConfig& config);
std::string fnv1a_hex(const std::string& bytes);

/// "spring" and "quantum" carry the published hyperparameter tables; the
/// "desk-*" presets shrink data and epochs to single-CPU scale; "smoke" is the
/// one-minute oscillator pipeline.
std::vector<std::string> preset_names();
RunConfig preset(const std::string& name);

}  // namespace metasym::io
