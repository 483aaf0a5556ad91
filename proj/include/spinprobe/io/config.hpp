// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace spinprobe::io {

enum class Experiment {
  SimulateDeer,
  SimulateOdmr,
  SimulatePumpProbe,
  SimulateCharge,
  FitDeer,
  Reconstruct,
  FitSaturation,
  FitChargeRelaxation,
  ExtractNoise,
};

/// Kebab-case names, also used as CLI verbs ("simulate-deer", ...).
std::string_view to_string(Experiment e);
/// Throws ValidationError listing the valid names.
Experiment experiment_from_string(std::string_view name);
const std::vector<Experiment>& all_experiments();

inline constexpr int kSchemaVersion = 1;

/// A run description. `parameters` mirrors the module types as a nested document; data
/// file paths live under parameters.data keyed by role.
struct RunConfig {
  int schema_version = kSchemaVersion;
  Experiment experiment = Experiment::SimulateDeer;
  nlohmann::json parameters = nlohmann::json::object();
  std::uint64_t seed = 0;
  unsigned threads = 0;  ///< 0 leaves the choice to the environment

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// YAML text -> RunConfig. Throws ValidationError for unknown keys, an unsupported schema
/// version, unknown experiment names or malformed YAML.
RunConfig parse_config(std::string_view yaml_text);
RunConfig load_config(const std::string& path);

/// Canonical YAML; parse_config(serialize_config(c)) == c. Doubles keep 17 digits.
std::string serialize_config(const RunConfig& config);

/// JSON form embedded in reports, and its inverse.
nlohmann::json config_to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);

}  // namespace spinprobe::io
