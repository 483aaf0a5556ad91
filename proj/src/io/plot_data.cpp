// SPDX-License-Identifier: Apache-2.0
#include "spinprobe/io/plot_data.hpp"

#include <filesystem>
#include <fstream>
#include <limits>

#include "spinprobe/errors.hpp"
#include "spinprobe/io/table.hpp"

namespace spinprobe::io {

using nlohmann::json;

namespace {

std::vector<double> series(const json& outputs, const std::string& key, const std::string& kind) {
  if (!outputs.contains(key) || !outputs.at(key).is_array())
    throw ValidationError("report has no '" + key + "' series for plot kind '" + kind + "'");
  std::vector<double> v;
  for (const auto& x : outputs.at(key)) v.push_back(x.is_number() ? x.get<double>() : std::numeric_limits<double>::quiet_NaN());
  return v;
}

std::string write_csv(const std::filesystem::path& dir, const std::string& name, const std::vector<std::string>& cols,
                      const std::vector<std::vector<double>>& data, const json& report) {
  const auto path = dir / name;
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path.string());
  write_table(f, cols, data,
              {"experiment: " + report.value("experiment", std::string("?")),
               "inputs_hash: " + report.value("inputs_hash", std::string("?"))});
  return path.string();
}

/// Writes one file from the named output series.
std::string simple(const json& report, const std::string& kind, const std::filesystem::path& dir,
                   const std::vector<std::pair<std::string, std::string>>& columns) {
  std::vector<std::string> names;
  std::vector<std::vector<double>> data;
  for (const auto& [col, key] : columns) {
    names.push_back(col);
    data.push_back(series(report.at("outputs"), key, kind));
  }
  return write_csv(dir, kind + ".csv", names, data, report);
}

std::vector<std::string> deer(const json& report, const std::filesystem::path& dir) {
  const auto& o = report.at("outputs");
  if (o.contains("curves")) {
    std::vector<std::string> paths;
    for (const auto& [role, c] : o.at("curves").items())
      paths.push_back(write_csv(dir, "deer_" + role + ".csv", {"tau_s", "s0_model", "s0_data"},
                                {series(c, "tau_s", "deer"), series(c, "s0_model", "deer"), series(c, "s0_data", "deer")},
                                report));
    return paths;
  }
  return {simple(report, "deer", dir, {{"tau_s", "tau_s"}, {"s0_model", "s0"}, {"s_pi2_model", "s_pi2"}})};
}

std::vector<std::string> odmr(const json& report, const std::filesystem::path& dir) {
  const auto& o = report.at("outputs");
  if (o.contains("odmr")) {
    const auto& d = o.at("odmr");
    return {write_csv(dir, "odmr.csv", {"freq_hz", "amplitude_model", "amplitude_data"},
                      {series(d, "freq_hz", "odmr"), series(d, "amplitude_model", "odmr"),
                       series(d, "amplitude_data", "odmr")},
                      report)};
  }
  return {simple(report, "odmr", dir, {{"freq_hz", "freq_hz"}, {"amplitude_model", "amplitude"}})};
}

std::vector<std::string> reconstruct_ranking(const json& report, const std::filesystem::path& dir) {
  const auto& o = report.at("outputs");
  if (!o.contains("ranked")) throw ValidationError("report has no ranking for plot kind 'reconstruct'");
  std::vector<std::vector<double>> cols(6);
  for (const auto& r : o.at("ranked")) {
    std::size_t k = 0;
    for (const auto& d : r.at("defects")) {
      cols[0].push_back(r.at("rank").get<double>());
      cols[1].push_back(r.at("index").get<double>());
      cols[2].push_back(r.at("score").is_number() ? r.at("score").get<double>() : std::numeric_limits<double>::infinity());
      cols[3].push_back(static_cast<double>(k++));
      cols[4].push_back(d.at("a_dipolar_hz").get<double>());
      cols[5].push_back(d.at("rho").get<double>());
    }
  }
  return {write_csv(dir, "reconstruct.csv", {"rank", "index", "score", "defect", "a_hz", "rho"}, cols, report)};
}

}  // namespace

const std::vector<std::string>& plot_kinds() {
  static const std::vector<std::string> kinds = {"deer",   "odmr",       "pump_probe", "charge",
                                                 "saturation", "relaxation", "noise",      "reconstruct"};
  return kinds;
}

std::vector<std::string> emit_plot_data(const json& report, const std::string& kind, const std::string& out_dir) {
  std::string valid;
  bool known = false;
  for (const auto& k : plot_kinds()) {
    valid += (valid.empty() ? "" : ", ") + k;
    known = known || k == kind;
  }
  if (!known) throw ValidationError("unknown plot kind '" + kind + "' (valid: " + valid + ")");
  if (!report.is_object() || !report.contains("outputs")) throw ValidationError("not a spinprobe report");
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);

  if (kind == "deer") return deer(report, dir);
  if (kind == "odmr") return odmr(report, dir);
  if (kind == "reconstruct") return reconstruct_ranking(report, dir);
  if (kind == "pump_probe")
    return {simple(report, kind, dir, {{"tau_sl_s", "tau_sl_s"}, {"p_probe", "p_probe"}, {"p_dark", "p_dark"}, {"s_pi2", "s_pi2"}})};
  if (kind == "charge")
    return {simple(report, kind, dir, {{"t_s", "t_s"}, {"p_up", "p_up"}, {"p_down", "p_down"}, {"p_plus", "p_plus"}})};
  if (kind == "saturation")
    return {simple(report, kind, dir, {{"power_w", "power_w"}, {"rate_hz", "rate_hz"}, {"rate_fit_hz", "rate_fit_hz"}})};
  if (kind == "relaxation")
    return {simple(report, kind, dir, {{"t_s", "t_s"}, {"value_data", "value_data"}, {"value_fit", "value_fit"}})};
  return {simple(report, kind, dir,
                 {{"gamma_sq", "gamma_sq"}, {"gamma_dq", "gamma_dq"}, {"gamma_mag", "gamma_mag"}, {"gamma_elec", "gamma_elec"}})};
}

}  // namespace spinprobe::io
