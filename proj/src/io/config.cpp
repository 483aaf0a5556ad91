// SPDX-License-Identifier: Apache-2.0
#include "spinprobe/io/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "spinprobe/errors.hpp"

namespace spinprobe::io {

namespace {

constexpr std::pair<Experiment, std::string_view> kNames[] = {
    {Experiment::SimulateDeer, "simulate-deer"},
    {Experiment::SimulateOdmr, "simulate-odmr"},
    {Experiment::SimulatePumpProbe, "simulate-pump-probe"},
    {Experiment::SimulateCharge, "simulate-charge"},
    {Experiment::FitDeer, "fit-deer"},
    {Experiment::Reconstruct, "reconstruct"},
    {Experiment::FitSaturation, "fit-saturation"},
    {Experiment::FitChargeRelaxation, "fit-charge-relaxation"},
    {Experiment::ExtractNoise, "extract-noise"},
};

nlohmann::json scalar_to_json(const YAML::Node& node) {
  const std::string& s = node.Scalar();
  if (node.Tag() == "!") return s;  // quoted
  if (s.empty() || s == "~" || s == "null") return nullptr;
  if (s == "true") return true;
  if (s == "false") return false;
  const char* end = s.data() + s.size();
  std::int64_t i = 0;
  if (auto [p, ec] = std::from_chars(s.data(), end, i); ec == std::errc() && p == end) return i;
  std::uint64_t u = 0;
  if (auto [p, ec] = std::from_chars(s.data(), end, u); ec == std::errc() && p == end) return u;
  double d = 0.0;
  const char* first = s.data() + (s.front() == '+' ? 1 : 0);
  if (auto [p, ec] = std::from_chars(first, end, d); ec == std::errc() && p == end && std::isfinite(d)) return d;
  return s;
}

nlohmann::json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Scalar:
      return scalar_to_json(node);
    case YAML::NodeType::Sequence: {
      auto arr = nlohmann::json::array();
      for (const auto& child : node) arr.push_back(yaml_to_json(child));
      return arr;
    }
    case YAML::NodeType::Map: {
      auto obj = nlohmann::json::object();
      for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return obj;
    }
  }
  return nullptr;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";  // keep the float type
  return s;
}

void emit_json(YAML::Emitter& out, const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::object:
      out << YAML::BeginMap;
      for (const auto& [k, v] : j.items()) {
        out << YAML::Key << k << YAML::Value;
        emit_json(out, v);
      }
      out << YAML::EndMap;
      break;
    case nlohmann::json::value_t::array:
      out << YAML::BeginSeq;
      for (const auto& v : j) emit_json(out, v);
      out << YAML::EndSeq;
      break;
    case nlohmann::json::value_t::string:
      out << YAML::DoubleQuoted << j.get<std::string>();
      break;
    case nlohmann::json::value_t::boolean:
      out << (j.get<bool>() ? "true" : "false");
      break;
    case nlohmann::json::value_t::number_integer:
      out << std::to_string(j.get<std::int64_t>());
      break;
    case nlohmann::json::value_t::number_unsigned:
      out << std::to_string(j.get<std::uint64_t>());
      break;
    case nlohmann::json::value_t::number_float:
      if (!std::isfinite(j.get<double>())) throw ValidationError("non-finite numbers cannot be stored in a config");
      out << format_double(j.get<double>());
      break;
    default:
      out << YAML::Null;
      break;
  }
}

RunConfig from_document(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ValidationError("config must be a mapping");
  for (const auto& [k, v] : doc.items()) {
    (void)v;
    if (k != "schema_version" && k != "experiment" && k != "parameters" && k != "seed" && k != "threads")
      throw ValidationError("unknown top-level key '" + k + "'");
  }
  RunConfig c;
  if (!doc.contains("schema_version") || !doc["schema_version"].is_number_integer())
    throw ValidationError("schema_version (integer) is required");
  c.schema_version = doc["schema_version"].get<int>();
  if (c.schema_version != kSchemaVersion)
    throw ValidationError("unsupported schema_version " + std::to_string(c.schema_version) + " (supported: " +
                          std::to_string(kSchemaVersion) + ")");
  if (!doc.contains("experiment") || !doc["experiment"].is_string()) throw ValidationError("experiment (string) is required");
  c.experiment = experiment_from_string(doc["experiment"].get<std::string>());
  if (doc.contains("seed")) {
    const auto& s = doc["seed"];
    if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() && s.get<std::int64_t>() < 0))
      throw ValidationError("seed must be a non-negative integer");
    c.seed = s.get<std::uint64_t>();
  }
  if (doc.contains("threads")) {
    const auto& t = doc["threads"];
    if (!t.is_number_integer() || t.get<std::int64_t>() < 1) throw ValidationError("threads must be an integer >= 1");
    c.threads = t.get<unsigned>();
  }
  if (doc.contains("parameters")) {
    if (!doc["parameters"].is_object()) throw ValidationError("parameters must be a mapping");
    c.parameters = doc["parameters"];
  }
  return c;
}

}  // namespace

std::string_view to_string(Experiment e) {
  for (const auto& [k, v] : kNames)
    if (k == e) return v;
  return "unknown";
}

Experiment experiment_from_string(std::string_view name) {
  std::string valid;
  for (const auto& [k, v] : kNames) {
    if (v == name) return k;
    valid += (valid.empty() ? "" : ", ") + std::string(v);
  }
  throw ValidationError("unknown experiment '" + std::string(name) + "' (valid: " + valid + ")");
}

const std::vector<Experiment>& all_experiments() {
  static const std::vector<Experiment> all = [] {
    std::vector<Experiment> v;
    for (const auto& [k, name] : kNames) {
      (void)name;
      v.push_back(k);
    }
    return v;
  }();
  return all;
}

RunConfig parse_config(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  return from_document(yaml_to_json(root));
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "schema_version" << YAML::Value << c.schema_version;
  out << YAML::Key << "experiment" << YAML::Value << YAML::DoubleQuoted << std::string(to_string(c.experiment));
  out << YAML::Key << "seed" << YAML::Value << std::to_string(c.seed);
  if (c.threads > 0) out << YAML::Key << "threads" << YAML::Value << c.threads;
  out << YAML::Key << "parameters" << YAML::Value;
  emit_json(out, c.parameters);
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["schema_version"] = c.schema_version;
  j["experiment"] = std::string(to_string(c.experiment));
  j["seed"] = c.seed;
  if (c.threads > 0) j["threads"] = c.threads;
  j["parameters"] = c.parameters;
  return j;
}

RunConfig config_from_json(const nlohmann::json& j) { return from_document(j); }

}  // namespace spinprobe::io
