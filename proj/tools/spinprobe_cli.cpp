// SPDX-License-Identifier: Apache-2.0
// spinprobe command line: one verb per experiment plus `run` and `plot`.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spinprobe/errors.hpp"
#include "spinprobe/io/config.hpp"
#include "spinprobe/io/plot_data.hpp"
#include "spinprobe/io/run.hpp"
#include "spinprobe/parallel.hpp"

namespace {

using spinprobe::io::RunConfig;
using spinprobe::io::RunContext;

struct RunFlags {
  std::string config_path;
  std::string report_path;
  std::vector<std::string> data;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::string checkpoint;
  bool resume = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--data", f.data, "Measurement table for a role, as ROLE=PATH (repeatable)");
  cmd->add_option("--out", f.out_dir, "Directory for report.json")->capture_default_str();
  cmd->add_option("--seed", f.seed, "Override the config seed");
  cmd->add_option("--threads", f.threads, "Worker threads (overrides SPINPROBE_THREADS and the config)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint file for reconstruct");
  cmd->add_flag("--resume", f.resume, "Continue reconstruct from --checkpoint");
}

int fail(int code, const std::string& msg) {
  std::cerr << "spinprobe: " << msg << '\n';
  return code;
}

int execute(RunConfig config, const RunFlags& f) {
  if (f.seed) config.seed = *f.seed;
  for (const auto& d : f.data) {
    const auto eq = d.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == d.size())
      return fail(spinprobe::io::kExitValidation, "--data expects ROLE=PATH, got '" + d + "'");
    config.parameters["data"][d.substr(0, eq)] = d.substr(eq + 1);
  }
  RunContext ctx;
  ctx.threads_flag = f.threads;
  if (!f.checkpoint.empty()) ctx.checkpoint_path = f.checkpoint;
  ctx.resume = f.resume;

  const auto outcome = spinprobe::io::run(config, ctx);
  if (outcome.report.is_null()) return fail(outcome.exit_code, outcome.message);

  std::filesystem::create_directories(f.out_dir);
  const auto path = std::filesystem::path(f.out_dir) / "report.json";
  std::ofstream out(path);
  if (!out) return fail(spinprobe::io::kExitInternal, "cannot write " + path.string());
  out << outcome.report.dump(2) << '\n';
  std::cout << "wrote " << path.string() << " (status " << outcome.report.value("status", std::string("ok")) << ")\n";
  for (const auto& w : outcome.report.at("warnings")) std::cerr << "warning: " << w.get<std::string>() << '\n';
  if (outcome.exit_code != 0) return fail(outcome.exit_code, outcome.message);
  return 0;
}

nlohmann::json read_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw spinprobe::ValidationError("cannot open report " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw spinprobe::ValidationError(path + ": not valid JSON (" + e.what() + ")");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spinprobe: NV-probe charge and spin dynamics simulation and inference"};
  app.footer(std::string("Thread count: --threads, else the ") + spinprobe::kThreadsEnvVar +
             " environment variable, else the config's threads, else all cores.\n"
             "Exit codes: 0 ok, 1 internal error, 2 invalid input (nothing written), "
             "3 fit did not converge (report written), 4 checkpoint mismatch.");
  app.require_subcommand(1);

  RunFlags flags;
  std::optional<spinprobe::io::Experiment> verb;
  for (const auto e : spinprobe::io::all_experiments()) {
    auto* cmd = app.add_subcommand(std::string(spinprobe::io::to_string(e)), "Run the " +
                                                                                 std::string(spinprobe::io::to_string(e)) +
                                                                                 " experiment");
    cmd->add_option("--config", flags.config_path, "YAML run config")->check(CLI::ExistingFile);
    add_run_flags(cmd, flags);
    cmd->callback([&verb, e] { verb = e; });
  }

  auto* run_cmd = app.add_subcommand("run", "Run the experiment named in a config, or re-run a report");
  auto* cfg_opt = run_cmd->add_option("--config", flags.config_path, "YAML run config")->check(CLI::ExistingFile);
  auto* rep_opt = run_cmd->add_option("--report", flags.report_path, "Report whose embedded config is re-run")
                      ->check(CLI::ExistingFile);
  cfg_opt->excludes(rep_opt);
  add_run_flags(run_cmd, flags);

  std::string plot_report, plot_kind, plot_out = ".";
  auto* plot_cmd = app.add_subcommand("plot", "Write CSV plot series from a report");
  plot_cmd->add_option("--report", plot_report, "Report file")->required()->check(CLI::ExistingFile);
  std::string kinds;
  for (const auto& k : spinprobe::io::plot_kinds()) kinds += (kinds.empty() ? "" : ", ") + k;
  plot_cmd->add_option("--kind", plot_kind, "One of: " + kinds)->required();
  plot_cmd->add_option("--out", plot_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : spinprobe::io::kExitValidation;
  }

  try {
    if (plot_cmd->parsed()) {
      for (const auto& p : spinprobe::io::emit_plot_data(read_report(plot_report), plot_kind, plot_out))
        std::cout << "wrote " << p << '\n';
      return 0;
    }
    RunConfig config;
    if (run_cmd->parsed()) {
      if (!flags.report_path.empty()) config = spinprobe::io::config_from_report(read_report(flags.report_path));
      else if (!flags.config_path.empty()) config = spinprobe::io::load_config(flags.config_path);
      else return fail(spinprobe::io::kExitValidation, "run needs --config or --report");
    } else {
      if (!flags.config_path.empty()) {
        config = spinprobe::io::load_config(flags.config_path);
        if (config.experiment != *verb)
          return fail(spinprobe::io::kExitValidation,
                      "config is for '" + std::string(spinprobe::io::to_string(config.experiment)) + "', not '" +
                          std::string(spinprobe::io::to_string(*verb)) + "'");
      } else {
        config.experiment = *verb;
      }
    }
    return execute(config, flags);
  } catch (const spinprobe::Error& e) {
    return fail(spinprobe::io::kExitValidation, e.what());
  } catch (const std::exception& e) {
    return fail(spinprobe::io::kExitInternal, e.what());
  }
}
