// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "spinprobe/io/config.hpp"

namespace spinprobe::io {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitValidation = 2,
  kExitNotConverged = 3,
  kExitCheckpoint = 4,
};

/// Settings that come from the command line rather than the config.
struct RunContext {
  unsigned threads_flag = 0;  ///< 0 = not given
  std::optional<std::string> checkpoint_path;
  bool resume = false;
  /// Relative data paths are resolved against this directory.
  std::string base_dir = ".";
};

struct RunOutcome {
  nlohmann::json report;  ///< null when the run stopped before producing results
  int exit_code = kExitOk;
  std::string message;
};

/// Validates everything (parameters, data files) before any computation, then runs the
/// experiment. Never throws for input problems; they map to exit codes.
RunOutcome run(const RunConfig& config, const RunContext& context = {});

inline constexpr const char* kReportFormat = "spinprobe.report";
inline constexpr int kReportVersion = 1;

/// The config embedded in a report, for re-running it.
RunConfig config_from_report(const nlohmann::json& report);

}  // namespace spinprobe::io
