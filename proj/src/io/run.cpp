// SPDX-License-Identifier: Apache-2.0
#include "spinprobe/io/run.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "spinprobe/charge_dynamics.hpp"
#include "spinprobe/coherence.hpp"
#include "spinprobe/errors.hpp"
#include "spinprobe/fitting.hpp"
#include "spinprobe/hash.hpp"
#include "spinprobe/io/table.hpp"
#include "spinprobe/parallel.hpp"
#include "spinprobe/reconstruction.hpp"
#include "spinprobe/spin_dynamics.hpp"

namespace spinprobe::io {

using nlohmann::json;

namespace {

constexpr const char* kSoftwareVersion = "0.1.0";

/// Typed, path-aware access to one mapping of the parameter document.
class Params {
 public:
  Params(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(path_ + ": expected a mapping");
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (const auto& [k, v] : j_.items()) {
      (void)v;
      if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
        std::string valid;
        for (const char* a : keys) valid += (valid.empty() ? "" : ", ") + std::string(a);
        throw ValidationError(where(k) + ": unknown key (valid: " + valid + ")");
      }
    }
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  std::string where(const std::string& key) const { return path_ + "." + key; }
  const json& raw(const char* key) const {
    if (!has(key)) throw ValidationError(where(key) + ": required");
    return j_.at(key);
  }

  double num(const char* key) const { return as_number(raw(key), where(key)); }
  double num(const char* key, double def) const { return has(key) ? num(key) : def; }

  std::uint64_t count(const char* key) const {
    const auto& v = raw(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d >= 0.0 && d == std::floor(d) && d < 1.8e19) return static_cast<std::uint64_t>(d);
    }
    throw ValidationError(where(key) + ": expected a non-negative integer");
  }
  std::uint64_t count(const char* key, std::uint64_t def) const { return has(key) ? count(key) : def; }

  bool flag(const char* key, bool def) const {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_boolean()) throw ValidationError(where(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string str(const char* key, const std::string& def) const {
    if (!has(key)) return def;
    const auto& v = raw(key);
    if (!v.is_string()) throw ValidationError(where(key) + ": expected a string");
    return v.get<std::string>();
  }

  Params sub(const char* key) const { return Params(raw(key), where(key)); }
  std::optional<Params> optional_sub(const char* key) const {
    if (!has(key)) return std::nullopt;
    return sub(key);
  }

  static double as_number(const json& v, const std::string& where) {
    if (!v.is_number()) throw ValidationError(where + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ValidationError(where + ": must be finite");
    return d;
  }

 private:
  const json& j_;
  std::string path_;
};

/// A list of numbers, or {start, stop, count} for an evenly spaced grid.
std::vector<double> grid(const Params& p, const char* key) {
  const auto& v = p.raw(key);
  std::vector<double> out;
  if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(Params::as_number(v[i], p.where(key) + "[" + std::to_string(i) + "]"));
  } else {
    const Params g = p.sub(key);
    g.allow({"start", "stop", "count"});
    const double start = g.num("start"), stop = g.num("stop");
    const auto n = g.count("count");
    if (n < 1 || n > 10'000'000) throw ValidationError(p.where(key) + ".count: must lie in [1, 1e7]");
    for (std::uint64_t i = 0; i < n; ++i)
      out.push_back(n == 1 ? start : start + (stop - start) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  if (out.empty()) throw ValidationError(p.where(key) + ": empty grid");
  return out;
}

void require_increasing(const std::vector<double>& v, const std::string& where) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] > v[i - 1])) throw ValidationError(where + ": values must be strictly increasing");
}

struct DefectSpec {
  NsDefect defect;
  double polarization = 0.0;
};

std::vector<DefectSpec> defects_from(const Params& p, const char* key, const Vec3& axis, std::size_t max_count) {
  const auto& arr = p.raw(key);
  if (!arr.is_array() || arr.empty()) throw ValidationError(p.where(key) + ": expected a non-empty list");
  if (arr.size() > max_count)
    throw ValidationError(p.where(key) + ": at most " + std::to_string(max_count) + " defects supported here");
  std::vector<DefectSpec> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const Params d(arr[i], p.where(key) + "[" + std::to_string(i) + "]");
    d.allow({"rho", "a_dipolar", "d_stark", "polarization", "position"});
    DefectSpec s;
    s.defect.rho = d.num("rho", 1.0);
    s.defect.d_stark = d.num("d_stark", 0.0);
    s.polarization = d.num("polarization", 0.0);
    if (d.has("position")) {
      const auto& pos = d.raw("position");
      if (!pos.is_array() || pos.size() != 3) throw ValidationError(d.where("position") + ": expected [x, y, z] in nm");
      Vec3 r;
      for (int k = 0; k < 3; ++k) r(k) = Params::as_number(pos[static_cast<std::size_t>(k)], d.where("position"));
      if (d.has("a_dipolar")) throw ValidationError(d.where("a_dipolar") + ": give either a_dipolar or position");
      try {
        s.defect = defect_at(r, s.defect.rho, s.defect.d_stark, axis);
      } catch (const DomainError& e) {
        throw ValidationError(d.where("position") + ": " + e.what());
      }
    } else {
      s.defect.a_dipolar = d.num("a_dipolar");
    }
    try {
      s.defect.validate();
    } catch (const DomainError& e) {
      throw ValidationError(p.where(key) + "[" + std::to_string(i) + "]: " + e.what());
    }
    if (!(std::abs(s.polarization) <= 1.0))
      throw ValidationError(d.where("polarization") + ": must lie in [-1, 1]");
    out.push_back(s);
  }
  return out;
}

ProbeSpin probe_from(const Params& p) {
  ProbeSpin probe;
  if (auto s = p.optional_sub("probe")) {
    s->allow({"gamma_bg", "stretch_n", "t1_dark", "quant_axis"});
    probe.gamma_bg = s->num("gamma_bg", 0.0);
    probe.stretch_n = s->num("stretch_n", 1.0);
    probe.t1_dark_p1 = s->num("t1_dark", probe.t1_dark_p1);
    if (s->has("quant_axis")) {
      const auto& a = s->raw("quant_axis");
      if (!a.is_array() || a.size() != 3) throw ValidationError(s->where("quant_axis") + ": expected [x, y, z]");
      for (int k = 0; k < 3; ++k) probe.quant_axis(k) = Params::as_number(a[static_cast<std::size_t>(k)], s->where("quant_axis"));
    }
  }
  try {
    probe.validate();
  } catch (const DomainError& e) {
    throw ValidationError(std::string("parameters.probe: ") + e.what());
  }
  return probe;
}

OdmrOptions odmr_options_from(const std::optional<Params>& p) {
  OdmrOptions o;
  if (!p) return o;
  p->allow({"line_shape", "linewidth", "contrast"});
  const auto shape = p->str("line_shape", "lorentzian");
  if (shape == "lorentzian") o.line_shape = LineShape::Lorentzian;
  else if (shape == "gaussian") o.line_shape = LineShape::Gaussian;
  else throw ValidationError(p->where("line_shape") + ": expected lorentzian or gaussian");
  o.linewidth = p->num("linewidth", o.linewidth);
  o.contrast = p->num("contrast", o.contrast);
  if (!(o.linewidth > 0.0)) throw ValidationError(p->where("linewidth") + ": must be positive");
  if (!(o.contrast >= 0.0)) throw ValidationError(p->where("contrast") + ": must be non-negative");
  return o;
}

json fit_to_json(const FitResult& f) {
  json j;
  j["params"] = f.params;
  j["std_errors"] = f.std_errors;
  j["residual_norm"] = f.residual_norm;
  j["n_evals"] = f.n_evals;
  j["converged"] = f.converged;
  return j;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

// ---------------------------------------------------------------------------------------

struct JobResult {
  json outputs = json::object();
  bool converged = true;
  bool complete = true;
  std::vector<std::string> warnings;
};

using Job = std::function<JobResult(const Executor&)>;

struct DataFile {
  std::string path;
  std::string hash;
  MeasurementTable table;
};

struct Prepared {
  Job job;
  std::map<std::string, DataFile> data;
};

class DataSet {
 public:
  DataSet(const json& params, const RunContext& ctx) {
    if (!params.contains("data")) return;
    const Params d(params.at("data"), "parameters.data");
    for (const auto& [role, v] : params.at("data").items()) {
      if (!v.is_string()) throw ValidationError(d.where(role) + ": expected a file path");
      paths_[role] = v.get<std::string>();
    }
    base_ = ctx.base_dir;
  }

  void allow(std::initializer_list<const char*> roles) const {
    for (const auto& [role, path] : paths_) {
      (void)path;
      if (std::none_of(roles.begin(), roles.end(), [&](const char* r) { return role == r; })) {
        std::string valid;
        for (const char* r : roles) valid += (valid.empty() ? "" : ", ") + std::string(r);
        throw ValidationError("unknown data role '" + role + "' (valid: " + valid + ")");
      }
    }
  }

  bool has(const std::string& role) const { return paths_.count(role) > 0; }

  const MeasurementTable& load(const std::string& role, std::map<std::string, DataFile>& loaded) const {
    const auto it = paths_.find(role);
    if (it == paths_.end()) throw ValidationError("data role '" + role + "' is required (pass --data " + role + "=PATH)");
    std::filesystem::path p(it->second);
    if (p.is_relative()) p = std::filesystem::path(base_) / p;
    std::ifstream f(p, std::ios::binary);
    if (!f) throw ValidationError("cannot open data file " + p.string() + " for role '" + role + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string bytes = ss.str();
    std::istringstream in(bytes);
    DataFile df;
    df.path = it->second;
    df.hash = hex64(fnv1a64(bytes));
    try {
      df.table = parse_table(in);
    } catch (const ParseError& e) {
      throw ValidationError(p.string() + ": " + e.what());
    }
    return loaded[role] = std::move(df), loaded[role].table;
  }

 private:
  std::map<std::string, std::string> paths_;
  std::string base_ = ".";
};

std::vector<double> checked_column(const MeasurementTable& t, const std::string& role, const std::string& name) {
  try {
    return t.column(name);
  } catch (const ValidationError& e) {
    throw ValidationError("data role '" + role + "': " + e.what());
  }
}

DeerDataset deer_dataset(const MeasurementTable& t, const std::string& role, double eta) {
  DeerDataset d;
  d.eta = eta;
  d.curve.tau = checked_column(t, role, "tau_s");
  const auto s0 = checked_column(t, role, "s0");
  require_increasing(d.curve.tau, "data role '" + role + "' column tau_s");
  for (double v : s0) d.curve.signal.emplace_back(v, 0.0);
  if (t.has("weight")) d.weights = t.column("weight");
  try {
    d.validate();
  } catch (const DomainError& e) {
    throw ValidationError("data role '" + role + "': " + e.what());
  }
  return d;
}

json curve_outputs(const CoherenceCurve& c) {
  return {{"tau_s", c.tau}, {"s0", c.in_phase()}, {"s_pi2", c.out_of_phase()}};
}

/// Model curve for each dataset at the fitted parameters.
json deer_fit_curves(const std::vector<std::pair<std::string, DeerDataset>>& sets, const std::vector<NsDefect>& fitted,
                     double gamma, double stretch_n) {
  json curves = json::object();
  ProbeSpin probe;
  probe.gamma_bg = gamma;
  probe.stretch_n = stretch_n;
  const auto pd = unpolarized(fitted);
  for (const auto& [role, d] : sets) {
    const auto model = deer_curve(d.curve.tau, probe, d.eta, pd);
    curves[role] = {{"eta", d.eta}, {"tau_s", d.curve.tau}, {"s0_data", d.curve.in_phase()}, {"s0_model", model.in_phase()}};
  }
  return curves;
}

std::vector<std::pair<std::string, DeerDataset>> deer_datasets(const Params& p, const DataSet& data,
                                                                std::map<std::string, DataFile>& loaded) {
  std::vector<std::pair<std::string, DeerDataset>> sets;
  const double eta1 = p.num("eta_one_tone", eta_one_tone);
  const double eta2 = p.num("eta_two_tone", eta_two_tone);
  if (data.has("one_tone")) sets.emplace_back("one_tone", deer_dataset(data.load("one_tone", loaded), "one_tone", eta1));
  if (data.has("two_tone")) sets.emplace_back("two_tone", deer_dataset(data.load("two_tone", loaded), "two_tone", eta2));
  if (sets.empty()) throw ValidationError("DEER data required: pass --data one_tone=PATH and/or --data two_tone=PATH");
  return sets;
}

ScoringOptions scoring_from(const std::optional<Params>& p) {
  ScoringOptions s;
  if (!p) return s;
  p->allow({"resolved_coupling_hz", "max_fitted_defects", "log10_gamma_min", "log10_gamma_max", "stretch_min",
            "stretch_max", "max_iterations"});
  s.resolved_coupling_hz = p->num("resolved_coupling_hz", s.resolved_coupling_hz);
  s.max_fitted_defects = p->count("max_fitted_defects", s.max_fitted_defects);
  s.log10_gamma_min = p->num("log10_gamma_min", s.log10_gamma_min);
  s.log10_gamma_max = p->num("log10_gamma_max", s.log10_gamma_max);
  s.stretch_min = p->num("stretch_min", s.stretch_min);
  s.stretch_max = p->num("stretch_max", s.stretch_max);
  s.lm.max_iterations = static_cast<int>(p->count("max_iterations", static_cast<std::uint64_t>(s.lm.max_iterations)));
  try {
    s.validate();
  } catch (const Error& e) {
    throw ValidationError(std::string("parameters.scoring: ") + e.what());
  }
  return s;
}

/// ODMR data for the optional Stark-shift fit, or null when no odmr role was given.
json odmr_input(const Params& p, const DataSet& data, std::map<std::string, DataFile>& loaded) {
  if (!data.has("odmr")) return nullptr;
  const auto& t = data.load("odmr", loaded);
  const auto freq = checked_column(t, "odmr", "freq_hz");
  const auto amp = checked_column(t, "odmr", "amplitude");
  require_increasing(freq, "data role 'odmr' column freq_hz");
  const OdmrOptions options = odmr_options_from(p.optional_sub("odmr"));
  return json{{"freq", freq}, {"amp", amp}, {"linewidth", options.linewidth},
              {"line_shape", options.line_shape == LineShape::Lorentzian ? "lorentzian" : "gaussian"}};
}

json run_odmr_fit(const json& odmr_in, const std::vector<NsDefect>& fixed, JobResult& r) {
  const auto freq = odmr_in["freq"].get<std::vector<double>>();
  const auto amp = odmr_in["amp"].get<std::vector<double>>();
  OdmrOptions opt;
  opt.linewidth = odmr_in["linewidth"].get<double>();
  opt.line_shape = odmr_in["line_shape"] == "gaussian" ? LineShape::Gaussian : LineShape::Lorentzian;
  const auto fit = fit_odmr(freq, amp, fixed, opt);
  if (!fit.fit.converged) {
    r.converged = false;
    r.warnings.push_back("ODMR Stark-shift fit did not converge (shifts may be unidentifiable)");
  }
  auto with_d = fixed;
  for (std::size_t i = 0; i < with_d.size(); ++i) with_d[i].d_stark = fit.d_stark[i];
  OdmrOptions model_opt = opt;
  model_opt.contrast = fit.contrast;
  const auto model = odmr_spectrum(with_d, model_opt, freq);
  return {{"d_stark_hz", fit.d_stark}, {"contrast", fit.contrast}, {"fit", fit_to_json(fit.fit)},
          {"freq_hz", freq}, {"amplitude_data", amp}, {"amplitude_model", model.amplitude}};
}

// ---------------------------------------------------------------------------------------
// experiments
// ---------------------------------------------------------------------------------------

Prepared prepare_simulate_deer(const RunConfig& c, const RunContext& ctx) {
  const Params p(c.parameters, "parameters");
  p.allow({"eta", "probe", "tau", "defects", "method", "hard_pulse_rabi"});
  DataSet(c.parameters, ctx).allow({});
  const ProbeSpin probe = probe_from(p);
  const double eta = p.num("eta", eta_two_tone);
  if (!(eta >= 0.0 && eta <= 1.0)) throw ValidationError("parameters.eta: must lie in [0, 1]");
  const auto tau = grid(p, "tau");
  require_increasing(tau, "parameters.tau");
  if (tau.front() < 0.0) throw ValidationError("parameters.tau: delays must be non-negative");
  const std::string method = p.str("method", "closed_form");
  if (method != "closed_form" && method != "hamiltonian")
    throw ValidationError("parameters.method: expected closed_form or hamiltonian");
  const auto specs = defects_from(p, "defects", probe.quant_axis, method == "hamiltonian" ? 3 : 10000);
  DeerSimulationOptions sim;
  sim.hard_pulse_rabi = p.num("hard_pulse_rabi", sim.hard_pulse_rabi);
  if (!(sim.hard_pulse_rabi > 0.0)) throw ValidationError("parameters.hard_pulse_rabi: must be positive");

  std::vector<PolarizedDefect> pd;
  std::vector<double> rhos;
  for (const auto& s : specs) {
    pd.push_back({s.defect, s.polarization});
    rhos.push_back(s.defect.rho);
  }
  Prepared out;
  out.job = [=](const Executor&) {
    JobResult r;
    const CoherenceCurve curve =
        method == "hamiltonian" ? simulate_deer(tau, probe, eta, pd, sim) : deer_curve(tau, probe, eta, pd);
    r.outputs = curve_outputs(curve);
    r.outputs["method"] = method;
    r.outputs["eta"] = eta;
    r.outputs["geometric_mean_rho"] = geometric_mean_rho(std::span<const double>(rhos));
    try {
      r.outputs["probe_point_s"] = find_probe_point(curve);
    } catch (const DomainError&) {
      r.outputs["probe_point_s"] = nullptr;
    }
    return r;
  };
  return out;
}

Prepared prepare_simulate_odmr(const RunConfig& c, const RunContext& ctx) {
  const Params p(c.parameters, "parameters");
  p.allow({"defects", "odmr", "freq"});
  DataSet(c.parameters, ctx).allow({});
  const auto specs = defects_from(p, "defects", default_quant_axis(), kMaxOdmrDefects);
  const auto options = odmr_options_from(p.optional_sub("odmr"));
  const auto freq = grid(p, "freq");
  std::vector<NsDefect> defects;
  for (const auto& s : specs) defects.push_back(s.defect);
  Prepared out;
  out.job = [=](const Executor&) {
    JobResult r;
    const auto spec = odmr_spectrum(defects, options, freq);
    json lines = json::array();
    for (const auto& l : spec.lines) lines.push_back({{"freq_hz", l.freq}, {"weight", l.weight}});
    r.outputs = {{"freq_hz", spec.freq}, {"amplitude", spec.amplitude}, {"lines", lines}, {"linewidth_hz", spec.linewidth}};
    return r;
  };
  return out;
}

Prepared prepare_simulate_pump_probe(const RunConfig& c, const RunContext& ctx) {
  const Params p(c.parameters, "parameters");
  p.allow({"defects", "sequence", "spin_lock"});
  DataSet(c.parameters, ctx).allow({});
  const auto specs = defects_from(p, "defects", default_quant_axis(), 3);
  const auto tau_sl = grid(p, "spin_lock");
  for (double t : tau_sl)
    if (t < 0.0) throw ValidationError("parameters.spin_lock: durations must be non-negative");
  PumpProbeSequence seq;
  seq.readout = ReadoutStage{};
  if (auto s = p.optional_sub("sequence")) {
    s->allow({"rabi", "secular", "tau_p", "probe_rabi_factor", "repolarize", "evolution", "dt_max"});
    seq.rabi = s->num("rabi", seq.rabi);
    seq.secular_spin_lock = s->flag("secular", seq.secular_spin_lock);
    seq.readout->tau_p = s->num("tau_p", seq.readout->tau_p);
    seq.readout->probe_rabi_factor = s->num("probe_rabi_factor", seq.readout->probe_rabi_factor);
    seq.dt_max = s->num("dt_max", 0.0);
    if (auto rp = s->optional_sub("repolarize")) {
      rp->allow({"power", "duration"});
      seq.repolarize = LaserSegment{rp->num("power"), rp->num("duration")};
      try {
        LaserResponse{}.repolarization_time(seq.repolarize->power);
      } catch (const DomainError& e) {
        throw ValidationError(rp->where("power") + ": " + e.what());
      }
    }
    if (s->has("evolution")) {
      const auto& ev = s->raw("evolution");
      if (!ev.is_array()) throw ValidationError(s->where("evolution") + ": expected a list");
      for (std::size_t i = 0; i < ev.size(); ++i) {
        const Params e(ev[i], s->where("evolution") + "[" + std::to_string(i) + "]");
        e.allow({"type", "duration", "power"});
        const auto type = e.str("type", "delay");
        if (type == "delay") seq.evolution.push_back(DelaySegment{e.num("duration")});
        else if (type == "laser") seq.evolution.push_back(LaserSegment{e.num("power"), e.num("duration")});
        else throw ValidationError(e.where("type") + ": expected delay or laser");
      }
    }
  }
  try {
    seq.validate();
  } catch (const Error& e) {
    throw ValidationError(std::string("parameters.sequence: ") + e.what());
  }
  std::vector<NsDefect> defects;
  for (const auto& s : specs) defects.push_back(s.defect);

  Prepared out;
  out.job = [=](const Executor& ex) {
    JobResult r;
    const std::size_t n = tau_sl.size();
    std::vector<PumpProbeRecord> recs(n);
    ex.parallel_for(n, [&](std::size_t lo, std::size_t hi, unsigned) {
      for (std::size_t i = lo; i < hi; ++i) {
        auto s = seq;
        s.spin_lock_duration = tau_sl[i];
        recs[i] = run_pump_probe(s, defects);
      }
    });
    std::vector<double> p_probe, p_dark, s_pi2, total;
    json p_dark_each = json::array(), p_dark_readout = json::array();
    for (const auto& rec : recs) {
      p_probe.push_back(rec.p_probe);
      p_dark.push_back(std::accumulate(rec.p_dark.begin(), rec.p_dark.end(), 0.0));
      s_pi2.push_back(rec.s_pi2);
      total.push_back(p_probe.back() + p_dark.back());
      p_dark_each.push_back(rec.p_dark);
      p_dark_readout.push_back(rec.p_dark_readout);
    }
    double drift = 0.0;
    for (double t : total) drift = std::max(drift, std::abs(t - total.front()));
    r.outputs = {{"tau_sl_s", tau_sl}, {"p_probe", p_probe}, {"p_dark", p_dark}, {"p_dark_each", p_dark_each},
                 {"p_dark_readout", p_dark_readout}, {"s_pi2", s_pi2},
                 {"pearson_r", n > 1 ? pearson(p_probe, p_dark) : 0.0}, {"conservation_drift", drift}};
    return r;
  };
  return out;
}

ChargeRateModel rates_from(const Params& p) {
  ChargeRateModel m;
  p.allow({"gamma_sat", "p_sat", "r_rec", "r_flip", "t1", "dark_rho_ss", "dark_t_c", "r_ion_dark", "r_rec_dark"});
  if (p.has("gamma_sat")) m.ionization.gamma_sat = p.num("gamma_sat");
  m.ionization.p_sat = p.num("p_sat", m.ionization.p_sat);
  m.r_rec = p.num("r_rec", 0.0);
  if (p.has("t1") && p.has("r_flip")) throw ValidationError(p.where("t1") + ": give either t1 or r_flip");
  if (p.has("t1")) {
    const double t1 = p.num("t1");
    if (!(t1 > 0.0)) throw ValidationError(p.where("t1") + ": must be positive");
    m.r_flip = ChargeRateModel::flip_rate_from_t1(t1);
  } else {
    m.r_flip = p.num("r_flip", 0.0);
  }
  m.r_ion_dark = p.num("r_ion_dark", 0.0);
  m.r_rec_dark = p.num("r_rec_dark", 0.0);
  if (p.has("dark_rho_ss") || p.has("dark_t_c")) {
    try {
      m.set_dark_relaxation(p.num("dark_rho_ss"), p.num("dark_t_c"));
    } catch (const DomainError& e) {
      throw ValidationError(p.where("dark_rho_ss") + ": " + e.what());
    }
  }
  try {
    m.validate();
  } catch (const DomainError& e) {
    throw ValidationError(std::string("parameters.rates: ") + e.what());
  }
  return m;
}

Prepared prepare_simulate_charge(const RunConfig& c, const RunContext& ctx) {
  const Params p(c.parameters, "parameters");
  p.allow({"rates", "power_w", "initial", "times", "trajectories"});
  DataSet(c.parameters, ctx).allow({});
  const ChargeRateModel rates = p.has("rates") ? rates_from(p.sub("rates")) : ChargeRateModel{};
  const double power = p.num("power_w");
  if (!(power >= 0.0)) throw ValidationError("parameters.power_w: must be non-negative");
  ChargeSpinPopulation pop0;
  if (auto i = p.optional_sub("initial")) {
    i->allow({"rho", "polarization"});
    try {
      pop0 = ChargeSpinPopulation::from_rho(i->num("rho", 1.0), i->num("polarization", 0.0));
    } catch (const DomainError& e) {
      throw ValidationError(std::string("parameters.initial: ") + e.what());
    }
  }
  const auto times = grid(p, "times");
  for (double t : times)
    if (t < 0.0) throw ValidationError("parameters.times: must be non-negative");
  const auto n_traj = p.count("trajectories", 0);
  const std::uint64_t seed = c.seed;

  Prepared out;
  out.job = [=](const Executor& ex) {
    JobResult r;
    std::vector<double> up, down, plus, pol;
    for (double t : times) {
      const auto s = propagate(pop0, rates, power, t);
      up.push_back(s.p_up);
      down.push_back(s.p_down);
      plus.push_back(s.p_plus);
      pol.push_back(s.polarization());
    }
    const double ri = rates.r_ion(power);
    r.outputs = {{"t_s", times}, {"p_up", up}, {"p_down", down}, {"p_plus", plus}, {"polarization", pol},
                 {"r_ion", ri}, {"polarization_decay_rate", polarization_decay_rate(power, rates)},
                 {"steady_state_p_plus", ri + rates.r_rec > 0.0 ? json(ri / (ri + rates.r_rec)) : json(nullptr)}};
    if (n_traj > 0) {
      const auto occ = trajectory_occupancy(pop0, rates, power, times, n_traj, seed, ex);
      std::vector<double> tu, td, tp;
      for (const auto& o : occ) {
        tu.push_back(o.p_up);
        td.push_back(o.p_down);
        tp.push_back(o.p_plus);
      }
      r.outputs["trajectories"] = {{"count", n_traj}, {"p_up", tu}, {"p_down", td}, {"p_plus", tp}};
    }
    return r;
  };
  return out;
}

Prepared prepare_fit_deer(const RunConfig& c, const RunContext& ctx) {
  const Params p(c.parameters, "parameters");
  p.allow({"data", "defects", "eta_one_tone", "eta_two_tone", "scoring", "odmr"});
  const DataSet data(c.parameters, ctx);
  data.allow({"one_tone", "two_tone", "odmr"});
  Prepared out;
  const auto sets = deer_datasets(p, data, out.data);
  const auto specs = defects_from(p, "defects", default_quant_axis(), 16);
  ScoringOptions scoring = scoring_from(p.optional_sub("scoring"));
  scoring.resolved_coupling_hz = 0.0;  // every listed defect is fitted
  scoring.max_fitted_defects = specs.size();
  CandidateConfiguration cand;
  for (const auto& s : specs) {
    cand.couplings.push_back(s.defect.a_dipolar);
    cand.rho.push_back(1.0);
  }
  const json odmr_in = odmr_input(p, data, out.data);

  out.job = [=](const Executor&) {
    JobResult r;
    std::vector<DeerDataset> ds;
    for (const auto& [role, d] : sets) ds.push_back(d);
    const ConfigurationScorer scorer(ds, scoring);
    const auto scored = scorer.score(cand);
    if (!scored.fit.converged) {
      r.converged = false;
      r.warnings.push_back("DEER fit did not converge");
    }
    const auto fitted = scored.config.defects();
    r.outputs = {{"rho", scored.config.rho}, {"a_dipolar_hz", scored.config.couplings}, {"gamma", scored.gamma},
                 {"stretch_n", scored.stretch_n}, {"score", scored.score}, {"fit", fit_to_json(scored.fit)},
                 {"geometric_mean_rho", geometric_mean_rho(std::span<const NsDefect>(fitted))},
                 {"curves", deer_fit_curves(sets, fitted, scored.gamma, scored.stretch_n)}};
    if (!odmr_in.is_null()) r.outputs["odmr"] = run_odmr_fit(odmr_in, fitted, r);
    return r;
  };
  return out;
}

Prepared prepare_reconstruct(const RunConfig& c, const RunContext& ctx) {
  const Params p(c.parameters, "parameters");
  p.allow({"data", "budget", "top_k", "prior", "scoring", "eta_one_tone", "eta_two_tone", "block_size",
           "checkpoint_every", "stop_after", "odmr", "report_top"});
  const DataSet data(c.parameters, ctx);
  data.allow({"one_tone", "two_tone", "odmr"});
  Prepared out;
  const auto sets = deer_datasets(p, data, out.data);
  ReconstructionOptions o;
  o.budget = p.count("budget");
  if (o.budget < 1) throw ValidationError("parameters.budget: must be at least 1");
  o.top_k = p.count("top_k", o.top_k);
  o.seed = c.seed;
  o.scoring = scoring_from(p.optional_sub("scoring"));
  o.block_size = p.count("block_size", o.block_size);
  o.checkpoint_every = p.count("checkpoint_every", o.checkpoint_every);
  if (p.has("stop_after")) o.stop_after = p.count("stop_after");
  if (auto pr = p.optional_sub("prior")) {
    pr->allow({"density_ppm", "thickness_nm", "coupling_cutoff_hz", "min_distance_nm"});
    o.prior.density_ppm = pr->num("density_ppm", o.prior.density_ppm);
    o.prior.slab.thickness_nm = pr->num("thickness_nm", o.prior.slab.thickness_nm);
    o.prior.slab.coupling_cutoff_hz = pr->num("coupling_cutoff_hz", o.prior.slab.coupling_cutoff_hz);
    o.prior.slab.min_distance_nm = pr->num("min_distance_nm", o.prior.slab.min_distance_nm);
  }
  o.checkpoint_path = ctx.checkpoint_path;
  o.resume = ctx.resume;
  try {
    o.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw ValidationError(std::string("parameters: ") + e.what());
  }
  const auto report_top = std::min<std::uint64_t>(p.count("report_top", o.top_k), o.top_k);
  const json odmr_in = odmr_input(p, data, out.data);

  out.job = [=](const Executor& ex) {
    JobResult r;
    std::vector<DeerDataset> ds;
    for (const auto& [role, d] : sets) ds.push_back(d);
    const auto res = reconstruct(ds, o, ex);
    r.complete = res.complete;
    json ranked = json::array();
    for (std::size_t i = 0; i < res.ranked.size() && i < report_top; ++i) {
      const auto& s = res.ranked[i];
      json defects = json::array();
      for (std::size_t k = 0; k < s.n_defects; ++k) {
        const auto& pos = s.config.positions[k];
        defects.push_back({{"a_dipolar_hz", s.config.couplings[k]}, {"rho", s.config.rho[k]},
                           {"position_nm", {pos.x(), pos.y(), pos.z()}}});
      }
      ranked.push_back({{"rank", i + 1}, {"index", s.config.index}, {"score", s.score}, {"n_defects", s.n_defects},
                        {"n_total", s.config.size()}, {"gamma", s.gamma}, {"stretch_n", s.stretch_n},
                        {"converged", s.fit.converged}, {"defects", defects}});
    }
    r.outputs = {{"evaluated", res.evaluated}, {"rejected", res.rejected}, {"complete", res.complete},
                 {"budget", o.budget}, {"config_hash", res.config_hash},
                 {"background", {{"gamma", res.background.gamma}, {"stretch_n", res.background.stretch_n}}},
                 {"ranked", ranked}};
    if (res.ranked.empty()) {
      r.converged = false;
      r.warnings.push_back("no candidate produced a finite score");
      return r;
    }
    const auto& best = res.ranked.front();
    std::vector<NsDefect> fitted;
    for (std::size_t k = 0; k < best.n_defects; ++k) {
      NsDefect d;
      d.a_dipolar = best.config.couplings[k];
      d.rho = best.config.rho[k];
      fitted.push_back(d);
    }
    r.outputs["curves"] = deer_fit_curves(sets, fitted, best.gamma, best.stretch_n);
    if (!fitted.empty()) r.outputs["geometric_mean_rho"] = geometric_mean_rho(std::span<const NsDefect>(fitted));
    if (!odmr_in.is_null() && !fitted.empty()) r.outputs["odmr"] = run_odmr_fit(odmr_in, fitted, r);
    if (!res.complete) r.warnings.push_back("stopped after " + std::to_string(res.evaluated) + " of " + std::to_string(o.budget) + " candidates; resume from the checkpoint");
    return r;
  };
  return out;
}

Prepared prepare_fit_saturation(const RunConfig& c, const RunContext& ctx) {
  const Params p(c.parameters, "parameters");
  p.allow({"data", "flux"});
  const DataSet data(c.parameters, ctx);
  data.allow({"saturation"});
  Prepared out;
  const auto& t = data.load("saturation", out.data);
  const auto power = checked_column(t, "saturation", "power_w");
  const auto rate = checked_column(t, "saturation", "rate_hz");
  PhotonFluxModel flux;
  if (auto f = p.optional_sub("flux")) {
    f->allow({"wavelength", "numerical_aperture", "spot_area"});
    flux.wavelength = f->num("wavelength", flux.wavelength);
    flux.numerical_aperture = f->num("numerical_aperture", flux.numerical_aperture);
    if (f->has("spot_area")) flux.spot_area = f->num("spot_area");
  }
  try {
    flux.validate();
  } catch (const DomainError& e) {
    throw ValidationError(std::string("parameters.flux: ") + e.what());
  }
  {
    std::set<double> distinct(power.begin(), power.end());
    if (distinct.size() < 3) throw ValidationError("data role 'saturation': needs at least 3 distinct powers");
    for (double v : power)
      if (v < 0.0) throw ValidationError("data role 'saturation': powers must be non-negative");
  }
  out.job = [=](const Executor&) {
    JobResult r;
    const auto fit = fit_saturation(power, rate, flux);
    std::vector<double> model;
    for (double v : power) model.push_back(saturation_rate(v, fit.model));
    r.converged = fit.fit.converged;
    if (!fit.fit.converged) r.warnings.push_back("saturation fit did not converge");
    if (fit.p_sat_unidentifiable) r.warnings.push_back("p_sat is not identifiable from these powers (data do not reach the knee)");
    r.outputs = {{"gamma_sat", fit.model.gamma_sat}, {"p_sat", fit.model.p_sat},
                 {"low_power_slope", fit.low_power_slope}, {"cross_section_m2", fit.cross_section},
                 {"cross_section_A2", fit.cross_section * 1e20}, {"flux_per_watt", flux_per_watt(flux)},
                 {"p_sat_unidentifiable", fit.p_sat_unidentifiable}, {"fit", fit_to_json(fit.fit)},
                 {"power_w", power}, {"rate_hz", rate}, {"rate_fit_hz", model}};
    return r;
  };
  return out;
}

Prepared prepare_fit_charge_relaxation(const RunConfig& c, const RunContext& ctx) {
  const Params p(c.parameters, "parameters");
  p.allow({"data", "model", "column"});
  const DataSet data(c.parameters, ctx);
  data.allow({"relaxation"});
  Prepared out;
  const auto& tab = data.load("relaxation", out.data);
  const auto model = p.str("model", "charge");
  if (model != "charge" && model != "mono_exponential")
    throw ValidationError("parameters.model: expected charge or mono_exponential");
  const auto column = p.str("column", model == "charge" ? "rho" : "value");
  const auto t = checked_column(tab, "relaxation", "t_s");
  const auto y = checked_column(tab, "relaxation", column);
  if (t.size() < 4) throw ValidationError("data role 'relaxation': needs at least 4 rows");
  out.job = [=](const Executor&) {
    JobResult r;
    std::vector<double> fitted;
    if (model == "charge") {
      const auto f = fit_charge_relaxation(t, y);
      for (double v : t) fitted.push_back(f.rho_ss + (f.rho0 - f.rho_ss) * std::exp(-v / f.t_c));
      r.converged = f.fit.converged;
      r.outputs = {{"rho0", f.rho0}, {"rho_ss", f.rho_ss}, {"t_c", f.t_c}, {"fit", fit_to_json(f.fit)}};
      if (f.fit.converged && f.rho_ss >= 0.0 && f.rho_ss <= 1.0 && f.t_c > 0.0) {
        const auto rates = f.dark_rates();
        r.outputs["r_ion_dark"] = rates.r_ion_dark;
        r.outputs["r_rec_dark"] = rates.r_rec_dark;
      }
    } else {
      const auto f = fit_mono_exponential(t, y);
      for (double v : t) fitted.push_back(f.offset + f.amplitude * std::exp(-f.rate * v));
      r.converged = f.fit.converged;
      r.outputs = {{"rate", f.rate}, {"amplitude", f.amplitude}, {"offset", f.offset}, {"fit", fit_to_json(f.fit)}};
    }
    if (!r.converged) r.warnings.push_back("relaxation fit did not converge");
    r.outputs["model"] = model;
    r.outputs["t_s"] = t;
    r.outputs["value_data"] = y;
    r.outputs["value_fit"] = fitted;
    return r;
  };
  return out;
}

Prepared prepare_extract_noise(const RunConfig& c, const RunContext& ctx) {
  const Params p(c.parameters, "parameters");
  p.allow({"data", "gamma_sq", "gamma_dq", "noise_model"});
  const DataSet data(c.parameters, ctx);
  data.allow({"noise"});
  Prepared out;
  std::vector<double> sq, dq;
  if (data.has("noise")) {
    const auto& t = data.load("noise", out.data);
    sq = checked_column(t, "noise", "gamma_sq");
    dq = checked_column(t, "noise", "gamma_dq");
  } else {
    auto values = [&](const char* key) {
      const auto& v = p.raw(key);
      std::vector<double> out_v;
      if (v.is_array()) {
        for (std::size_t i = 0; i < v.size(); ++i) out_v.push_back(Params::as_number(v[i], p.where(key)));
      } else {
        out_v.push_back(p.num(key));
      }
      return out_v;
    };
    sq = values("gamma_sq");
    dq = values("gamma_dq");
  }
  if (sq.size() != dq.size() || sq.empty()) throw ValidationError("gamma_sq and gamma_dq must be non-empty and equally long");
  for (std::size_t i = 0; i < sq.size(); ++i)
    if (!(sq[i] >= 0.0) || !(dq[i] >= 0.0)) throw ValidationError("decay rates must be non-negative");
  NoiseModel model;
  if (p.has("noise_model")) {
    const auto& m = p.raw("noise_model");
    if (!m.is_array() || m.size() != 2 || !m[0].is_array() || !m[1].is_array() || m[0].size() != 2 || m[1].size() != 2)
      throw ValidationError("parameters.noise_model: expected [[a, b], [c, d]]");
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < 2; ++k)
        model.matrix(i, k) = Params::as_number(m[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)], "parameters.noise_model");
    if (std::abs(model.matrix.determinant()) < 1e-300) throw ValidationError("parameters.noise_model: singular matrix");
  }
  out.job = [=](const Executor&) {
    JobResult r;
    std::vector<double> mag, elec;
    for (std::size_t i = 0; i < sq.size(); ++i) {
      const auto n = extract_noise(sq[i], dq[i], model);
      mag.push_back(n.gamma_mag);
      elec.push_back(n.gamma_elec);
      for (const auto& w : n.warnings) r.warnings.push_back("row " + std::to_string(i + 1) + ": " + w);
    }
    r.outputs = {{"gamma_sq", sq}, {"gamma_dq", dq}, {"gamma_mag", mag}, {"gamma_elec", elec},
                 {"noise_model", {{model.matrix(0, 0), model.matrix(0, 1)}, {model.matrix(1, 0), model.matrix(1, 1)}}}};
    return r;
  };
  return out;
}

Prepared prepare(const RunConfig& c, const RunContext& ctx) {
  switch (c.experiment) {
    case Experiment::SimulateDeer: return prepare_simulate_deer(c, ctx);
    case Experiment::SimulateOdmr: return prepare_simulate_odmr(c, ctx);
    case Experiment::SimulatePumpProbe: return prepare_simulate_pump_probe(c, ctx);
    case Experiment::SimulateCharge: return prepare_simulate_charge(c, ctx);
    case Experiment::FitDeer: return prepare_fit_deer(c, ctx);
    case Experiment::Reconstruct: return prepare_reconstruct(c, ctx);
    case Experiment::FitSaturation: return prepare_fit_saturation(c, ctx);
    case Experiment::FitChargeRelaxation: return prepare_fit_charge_relaxation(c, ctx);
    case Experiment::ExtractNoise: return prepare_extract_noise(c, ctx);
  }
  throw ValidationError("unsupported experiment");
}

const char* module_of(Experiment e) {
  switch (e) {
    case Experiment::SimulateDeer: return "coherence, spin-dynamics";
    case Experiment::SimulateOdmr: return "coherence";
    case Experiment::SimulatePumpProbe: return "spin-dynamics";
    case Experiment::SimulateCharge: return "charge-dynamics";
    case Experiment::FitDeer: return "inference, coherence";
    case Experiment::Reconstruct: return "inference, defect-model";
    case Experiment::FitSaturation: return "inference, charge-dynamics";
    case Experiment::FitChargeRelaxation: return "inference, charge-dynamics";
    case Experiment::ExtractNoise: return "inference";
  }
  return "";
}

}  // namespace

RunOutcome run(const RunConfig& config, const RunContext& ctx) {
  RunOutcome out;
  Prepared prepared;
  try {
    prepared = prepare(config, ctx);
  } catch (const CheckpointError& e) {
    out.exit_code = kExitCheckpoint;
    out.message = e.what();
    return out;
  } catch (const Error& e) {
    out.exit_code = kExitValidation;
    out.message = e.what();
    return out;
  } catch (const nlohmann::json::exception& e) {
    out.exit_code = kExitValidation;
    out.message = std::string("invalid parameter: ") + e.what();
    return out;
  }

  const unsigned threads = resolve_thread_count(ctx.threads_flag, config.threads);
  JobResult result;
  try {
    result = prepared.job(Executor(threads));
  } catch (const CheckpointError& e) {
    out.exit_code = kExitCheckpoint;
    out.message = e.what();
    return out;
  } catch (const FitQualityError& e) {
    out.exit_code = kExitNotConverged;
    out.message = e.what();
    return out;
  } catch (const NumericalInstabilityError& e) {
    out.exit_code = kExitNotConverged;
    out.message = e.what();
    return out;
  } catch (const Error& e) {
    out.exit_code = kExitValidation;
    out.message = e.what();
    return out;
  } catch (const std::exception& e) {
    out.exit_code = kExitInternal;
    out.message = e.what();
    return out;
  }

  json& rep = out.report;
  const json cfg = config_to_json(config);
  std::string fingerprint = cfg.dump();
  json data = json::object();
  for (const auto& [role, df] : prepared.data) {
    data[role] = {{"path", df.path}, {"fnv1a64", df.hash}, {"rows", df.table.row_count}};
    fingerprint += "\n" + role + ":" + df.hash;
  }
  rep["report_format"] = kReportFormat;
  rep["version"] = kReportVersion;
  rep["experiment"] = std::string(to_string(config.experiment));
  rep["seed"] = config.seed;
  rep["inputs_hash"] = hex64(fnv1a64(fingerprint));
  rep["config"] = cfg;
  rep["data"] = data;
  rep["outputs"] = result.outputs;
  rep["warnings"] = result.warnings;
  rep["status"] = !result.converged ? "not_converged" : (!result.complete ? "incomplete" : "ok");
  rep["provenance"] = {{"software", "spinprobe"}, {"software_version", kSoftwareVersion},
                       {"modules", module_of(config.experiment)}, {"rng", "philox4x32-10 (seed, stream, counter)"},
                       {"schema_version", config.schema_version}};
  out.exit_code = result.converged ? kExitOk : kExitNotConverged;
  if (!result.converged) out.message = "fit did not converge";
  return out;
}

RunConfig config_from_report(const nlohmann::json& report) {
  if (!report.is_object() || report.value("report_format", "") != kReportFormat)
    throw ValidationError("not a spinprobe report");
  if (!report.contains("config")) throw ValidationError("report has no embedded config");
  return config_from_json(report.at("config"));
}

}  // namespace spinprobe::io
