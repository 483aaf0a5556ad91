// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "spinprobe/errors.hpp"
#include "spinprobe/io/config.hpp"
#include "spinprobe/io/plot_data.hpp"
#include "spinprobe/io/run.hpp"
#include "spinprobe/io/table.hpp"

using namespace spinprobe;
using namespace spinprobe::io;

namespace {

const char* kDeerYaml = R"(schema_version: 1
experiment: simulate-deer
seed: 9
parameters:
  eta: 0.75
  probe: {gamma_bg: 30000, stretch_n: 1.5}
  tau: {start: 0, stop: 1.0e-5, count: 11}
  defects:
    - {rho: 0.474, a_dipolar: 158600}
    - {rho: 0.302, a_dipolar: 125000.0, polarization: 0.25}
)";

std::filesystem::path scratch_dir(const char* name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config round trip through YAML") {
  const auto c = parse_config(kDeerYaml);
  CHECK(c.experiment == Experiment::SimulateDeer);
  CHECK(c.seed == 9);
  CHECK(parse_config("schema_version: 1\nexperiment: simulate-deer\nparameters: {label: \"0.5\"}\n").parameters["label"].is_string());
  CHECK(c.parameters["defects"][0]["a_dipolar"].is_number_integer());
  CHECK(c.parameters["tau"]["stop"].get<double>() == 1e-5);
  const auto again = parse_config(serialize_config(c));
  CHECK(again == c);
  CHECK(config_from_json(config_to_json(c)) == c);

  RunConfig awkward;
  awkward.parameters["x"] = 0.1 + 0.2;
  awkward.parameters["y"] = 3.0;
  awkward.parameters["s"] = "true";
  CHECK(parse_config(serialize_config(awkward)) == awkward);
}

TEST_CASE("config validation errors") {
  CHECK_THROWS_AS(parse_config("schema_version: 1\nexperiment: simulate-deer\nbogus: 1\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("schema_version: 2\nexperiment: simulate-deer\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("experiment: simulate-deer\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("schema_version: 1\nexperiment: teleport\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("schema_version: 1\nexperiment: [\n"), ValidationError);
  try {
    experiment_from_string("nope");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("fit-saturation") != std::string::npos);
  }
}

TEST_CASE("table parsing reports line numbers") {
  std::istringstream ok("# comment\ntau_s, s0\n0, 1\n1e-6, 0.9\n");
  const auto t = parse_table(ok);
  CHECK(t.row_count == 2);
  CHECK(t.column("s0")[1] == 0.9);
  CHECK_THROWS_AS(t.column("missing"), ValidationError);

  std::istringstream ragged("a,b\n1,2\n3\n");
  try {
    parse_table(ragged);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::istringstream text("a,b\n1,x\n");
  CHECK_THROWS_AS(parse_table(text), ParseError);
  std::istringstream empty("# nothing\n");
  CHECK_THROWS_AS(parse_table(empty), ParseError);
  std::istringstream dup("a,a\n1,2\n");
  CHECK_THROWS_AS(parse_table(dup), ParseError);
}

TEST_CASE("tables round trip at full precision") {
  std::ostringstream out;
  write_table(out, {"x", "y"}, {{0.1, 1.0 / 3.0}, {2e-300, -7.0}}, {"note"});
  std::istringstream in(out.str());
  const auto t = parse_table(in);
  CHECK(t.column("x")[1] == 1.0 / 3.0);
  CHECK(t.column("y")[0] == 2e-300);
}

TEST_CASE("runs are deterministic and re-runnable from their report") {
  const auto c = parse_config(kDeerYaml);
  const auto a = run(c);
  const auto b = run(c);
  REQUIRE(a.exit_code == kExitOk);
  CHECK(a.report.dump() == b.report.dump());
  CHECK(a.report["report_format"] == kReportFormat);
  CHECK(a.report["outputs"]["s0"].size() == 11);
  const auto again = run(config_from_report(a.report));
  CHECK(again.report.dump() == a.report.dump());
}

TEST_CASE("invalid input produces no report") {
  auto c = parse_config(kDeerYaml);
  c.parameters["defects"][0]["rho"] = 1.5;
  auto out = run(c);
  CHECK(out.exit_code == kExitValidation);
  CHECK(out.report.is_null());
  CHECK(out.message.find("defects[0]") != std::string::npos);

  c = parse_config(kDeerYaml);
  c.parameters["typo"] = 1;
  CHECK(run(c).exit_code == kExitValidation);

  RunConfig fit;
  fit.experiment = Experiment::FitSaturation;
  fit.parameters["data"]["saturation"] = "/nonexistent/file.csv";
  out = run(fit);
  CHECK(out.exit_code == kExitValidation);
  CHECK(out.report.is_null());
}

TEST_CASE("data tables feed fits and non-convergence maps to exit 3") {
  const auto dir = scratch_dir("spinprobe_io_test");
  {
    std::ofstream f(dir / "flat.csv");
    f << "t_s,value\n";
    for (int i = 0; i < 10; ++i) f << i * 1e-4 << ",0.5\n";
  }
  RunConfig c;
  c.experiment = Experiment::FitChargeRelaxation;
  c.parameters["model"] = "mono_exponential";
  c.parameters["data"]["relaxation"] = "flat.csv";
  RunContext ctx;
  ctx.base_dir = dir.string();
  const auto out = run(c, ctx);
  CHECK(out.exit_code == kExitNotConverged);
  REQUIRE(out.report.is_object());
  CHECK(out.report["status"] == "not_converged");
  CHECK(out.report["data"]["relaxation"]["rows"] == 10);

  c.parameters["data"]["relaxation"] = "missing.csv";
  CHECK(run(c, ctx).exit_code == kExitValidation);
  c.parameters["data"]["other"] = "flat.csv";
  CHECK(run(c, ctx).exit_code == kExitValidation);
}

TEST_CASE("noise extraction through the run layer") {
  RunConfig c;
  c.experiment = Experiment::ExtractNoise;
  c.parameters["gamma_sq"] = {15.0, 30.0};
  c.parameters["gamma_dq"] = {20.0, 10.0};
  const auto out = run(c);
  REQUIRE(out.exit_code == kExitOk);
  CHECK(out.report["outputs"]["gamma_mag"][0].get<double>() == doctest::Approx(10.0));
  CHECK(out.report["outputs"]["gamma_elec"][0].get<double>() == doctest::Approx(5.0));
  CHECK(out.report["warnings"].empty());
}

TEST_CASE("plot data emission") {
  const auto out = run(parse_config(kDeerYaml));
  const auto dir = scratch_dir("spinprobe_plot_test");
  const auto paths = emit_plot_data(out.report, "deer", dir.string());
  REQUIRE(paths.size() == 1);
  const auto t = load_table(paths[0]);
  CHECK(t.row_count == 11);
  CHECK(t.has("s_pi2_model"));
  try {
    emit_plot_data(out.report, "spectrogram", dir.string());
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("pump_probe") != std::string::npos);
  }
  CHECK_THROWS_AS(emit_plot_data(out.report, "saturation", dir.string()), ValidationError);
}
