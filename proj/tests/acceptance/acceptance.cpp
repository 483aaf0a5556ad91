// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers as arguments to
// run a subset; the exit status is nonzero when any selected criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "spinprobe/charge_dynamics.hpp"
#include "spinprobe/coherence.hpp"
#include "spinprobe/fitting.hpp"
#include "spinprobe/reconstruction.hpp"
#include "spinprobe/rng.hpp"
#include "spinprobe/spin_dynamics.hpp"

using namespace spinprobe;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(a + (b - a) * i / (n - 1));
  return v;
}

// Table 1 values
const std::vector<NsDefect> kTable1{{0.474, 158.6e3, 0.0, {}}, {0.302, 125e3, 0.0, {}}};

/// One- and two-tone DEER on a 200-point grid with i.i.d. Gaussian noise.
std::vector<DeerDataset> table1_datasets(double sigma, std::uint64_t noise_seed) {
  const auto tau = linspace(0.0, 16e-6, 200);
  ProbeSpin probe;
  probe.gamma_bg = 3e4;
  probe.stretch_n = 1.5;
  std::vector<DeerDataset> out;
  std::uint64_t stream = 0;
  for (double eta : {eta_one_tone, eta_two_tone}) {
    auto curve = deer_curve(tau, probe, eta, unpolarized(kTable1));
    CounterRng rng(noise_seed, stream++);
    for (auto& s : curve.signal) s = Complex(s.real() + sigma * rng.normal(), 0.0);
    out.push_back({curve, eta, {}});
  }
  return out;
}

Verdict criterion1() {
  const auto t0 = Clock::now();
  const auto tau = linspace(0.0, 10e-6, 100);
  ProbeSpin probe;  // Gamma = 0
  double worst = 0.0;
  int cases = 0;
  for (int k : {1, 2}) {
    for (double rho : {0.0, 1.0, 0.474}) {
      std::vector<PolarizedDefect> d;
      for (int i = 0; i < k; ++i) {
        NsDefect def;
        def.rho = i == 0 ? rho : 1.0 - rho;
        def.a_dipolar = i == 0 ? 158.6e3 : -125e3;
        def.d_stark = i == 0 ? -41e3 : 33e3;
        d.push_back({def, i == 0 ? 0.0 : 0.6});
      }
      for (double eta : {eta_one_tone, eta_two_tone}) {
        const auto sim = simulate_deer(tau, probe, eta, d);
        const auto cf = deer_curve(tau, probe, eta, d);
        for (std::size_t j = 0; j < tau.size(); ++j) worst = std::max(worst, std::abs(sim.signal[j] - cf.signal[j]));
        ++cases;
      }
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-6 && t <= 30.0,
          fmt("closed form vs Hamiltonian, %d cases: max |dS| = %.2e (<= 1e-6), %.2f s (<= 30 s)", cases, worst, t)};
}

Verdict criterion2(unsigned threads) {
  const auto t0 = Clock::now();
  const auto data = table1_datasets(0.01, 2024);
  ReconstructionOptions o;
  o.budget = 1'000'000;
  o.top_k = 100;
  o.seed = 1;
  const auto res = reconstruct(data, o, Executor(threads));
  const double t = seconds_since(t0);
  if (res.ranked.empty()) return {false, "no finite candidate"};
  const auto& best = res.ranked.front();
  // the in-phase signal is even in a, so only |a| is recoverable
  std::vector<std::pair<double, double>> found;
  for (std::size_t i = 0; i < best.n_defects; ++i) found.push_back({std::abs(best.config.couplings[i]), best.config.rho[i]});
  std::sort(found.begin(), found.end(), [](auto a, auto b) { return a.first > b.first; });
  std::string got;
  for (std::size_t i = 0; i < found.size(); ++i) got += fmt(" (%.1f kHz, %.3f)", found[i].first / 1e3, found[i].second);
  // match the two dominant (largest rho) defects; rho ~ 0 entries leave no trace in the signal
  std::stable_sort(found.begin(), found.end(), [](auto a, auto b) { return a.second > b.second; });
  if (found.size() > 2) found.resize(2);
  std::sort(found.begin(), found.end(), [](auto a, auto b) { return a.first > b.first; });
  bool ok = found.size() >= 2;
  double da = INFINITY, dr = INFINITY;
  if (ok) {
    da = std::max(std::abs(found[0].first - 158.6e3), std::abs(found[1].first - 125e3));
    dr = std::max(std::abs(found[0].second - 0.474), std::abs(found[1].second - 0.302));
    ok = da <= 3e3 && dr <= 0.03;
  }
  return {ok && t <= 600.0,
          fmt("budget 1e6, %u thread(s): best #%llu fitted%s; max |d|a|| = %.2f kHz (<= 3), max |drho| = %.3f (<= 0.03), "
              "%.0f s (<= 600 s)",
              threads, static_cast<unsigned long long>(best.config.index), got.c_str(), da / 1e3, dr, t)};
}

Verdict criterion3() {
  const double g = geometric_mean_rho(std::span<const NsDefect>(kTable1));
  const double oracle = std::sqrt(0.474 * 0.302);
  const bool ok = std::abs(g - oracle) <= 1e-15 && std::abs(g - 0.3784) <= 0.002 && std::abs(g - 0.378) <= 0.002;
  return {ok, fmt("geometric mean rho = %.5f (sqrt oracle %.5f); within 0.002 of 0.3784 and of the measured 0.378", g,
                  oracle)};
}

Verdict criterion4(unsigned threads) {
  const auto t0 = Clock::now();
  ChargeRateModel rates;
  rates.r_rec = 3000.0;
  rates.r_flip = ChargeRateModel::flip_rate_from_t1(1.9e-3);
  const double power = 1e-3;
  const auto p0 = ChargeSpinPopulation::from_rho(1.0, 1.0);
  const std::vector<double> cps{5e-5, 1.5e-4, 4e-4, 1e-3, 3e-3};
  const std::size_t n = 10000;
  const auto occ = trajectory_occupancy(p0, rates, power, cps, n, 77, Executor(threads));
  double worst_z = 0.0;
  for (std::size_t c = 0; c < cps.size(); ++c) {
    const auto exact = propagate(p0, rates, power, cps[c]);
    for (auto [e, s] : {std::pair{exact.p_up, occ[c].p_up}, {exact.p_down, occ[c].p_down}, {exact.p_plus, occ[c].p_plus}}) {
      const double se = std::sqrt(std::max(e * (1.0 - e), 1e-12) / static_cast<double>(n));
      worst_z = std::max(worst_z, std::abs(s - e) / se);
    }
  }
  const double ri = rates.r_ion(power);
  const double ss_err = std::abs(propagate(p0, rates, power, 10.0).p_plus - ri / (ri + rates.r_rec));
  const double t = seconds_since(t0);
  return {worst_z <= 3.0 && ss_err <= 1e-9 && t <= 60.0,
          fmt("1e4 trajectories at 5 checkpoints: worst deviation %.2f SE (<= 3); steady-state p+ error %.1e (<= 1e-9); "
              "%.2f s (<= 60 s)",
              worst_z, ss_err, t)};
}

Verdict criterion5() {
  const std::vector<double> powers{36e-6, 100e-6, 200e-6, 500e-6, 1e-3, 2e-3, 3.3e-3};
  const SaturationModel truth{default_saturation_model().gamma_sat, 1.6e-3};
  std::vector<double> rates;
  for (double p : powers) rates.push_back(saturation_rate(p, truth));
  const PhotonFluxModel flux;
  const auto fit = fit_saturation(powers, rates, flux);
  const double psat_err = std::abs(fit.model.p_sat / 1.6e-3 - 1.0);
  // slope consistent with sigma = 2.5e-4 A^2 under the default flux model
  const double sigma = 2.5e-24;
  const double slope = sigma * flux_per_watt(flux);
  const double sigma_err = std::abs(cross_section(slope, flux) / sigma - 1.0);
  const double fit_sigma_err = std::abs(fit.cross_section / sigma - 1.0);
  return {fit.fit.converged && !fit.p_sat_unidentifiable && psat_err <= 0.05 && sigma_err <= 0.01 && fit_sigma_err <= 0.01,
          fmt("P_sat = %.4f mW (rel. err %.1e <= 5%%); sigma round trip rel. err %.1e, via fit %.1e (<= 1%%)",
              fit.model.p_sat * 1e3, psat_err, sigma_err, fit_sigma_err)};
}

Verdict criterion6() {
  const double rate = 1.0 / 1.9e-3;
  const auto t = linspace(0.0, 10e-3, 100);
  std::vector<double> clean, noisy;
  CounterRng rng(606, 0);
  for (double v : t) {
    clean.push_back(0.05 + 0.9 * std::exp(-rate * v));
    noisy.push_back(clean.back() + 0.01 * rng.normal());
  }
  const auto a = fit_mono_exponential(t, clean);
  const auto b = fit_mono_exponential(t, noisy);
  const double ea = std::abs(a.rate / rate - 1.0), eb = std::abs(b.rate / rate - 1.0);
  return {a.fit.converged && ea <= 1e-6 && eb <= 0.10,
          fmt("T1 = 1.9 ms: noiseless rel. err %.1e (<= 1e-6); sigma = 0.01 rel. err %.3f (<= 0.10)", ea, eb)};
}

Verdict criterion7() {
  PumpProbeSequence seq;
  seq.rabi = 400e3;
  seq.readout = ReadoutStage{};
  const std::vector<NsDefect> d{{1.0, 158.6e3, 0.0, {}}};
  const auto grid = linspace(0.0, 10e-6, 41);
  std::vector<double> pp, pd;
  double drift = 0.0, p_dark0 = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    seq.spin_lock_duration = grid[i];
    const auto r = run_pump_probe(seq, d);
    pp.push_back(r.p_probe);
    pd.push_back(r.p_dark[0]);
    if (i == 0) p_dark0 = r.p_dark[0];
    drift = std::max(drift, std::abs(pp.back() + pd.back() - (pp.front() + pd.front())));
  }
  const double mp = std::accumulate(pp.begin(), pp.end(), 0.0) / pp.size();
  const double md = std::accumulate(pd.begin(), pd.end(), 0.0) / pd.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < pp.size(); ++i) {
    sxy += (pp[i] - mp) * (pd[i] - md);
    sxx += (pp[i] - mp) * (pp[i] - mp);
    syy += (pd[i] - md) * (pd[i] - md);
  }
  const double r = sxy / std::sqrt(sxx * syy);
  return {r <= -0.9 && std::abs(p_dark0) <= 1e-12 && drift <= 1e-6,
          fmt("a = 158.6 kHz, Rabi 400 kHz: Pearson r = %.4f (<= -0.9); p_dark(0) = %.1e; "
              "max drift of p_probe + p_dark = %.1e (<= 1e-6)",
              r, p_dark0, drift)};
}

Verdict criterion8() {
  CounterRng rng(808, 0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const NoiseRates truth{1e4 * rng.uniform(), 1e4 * rng.uniform(), {}};
    const auto [sq, dq] = forward_noise(truth);
    const auto back = extract_noise(sq, dq);
    worst = std::max({worst, std::abs(back.gamma_mag - truth.gamma_mag) / std::max(1.0, truth.gamma_mag),
                      std::abs(back.gamma_elec - truth.gamma_elec) / std::max(1.0, truth.gamma_elec)});
  }
  return {worst <= 1e-12, fmt("extract_noise(forward(x)) on 100 random points: max rel. deviation %.1e (<= 1e-12)", worst)};
}

Verdict criterion9(unsigned threads) {
  const auto data = table1_datasets(0.01, 9);
  ReconstructionOptions o;
  o.budget = 100'000;
  o.top_k = 50;
  o.seed = 99;
  auto t0 = Clock::now();
  const auto one = reconstruct(data, o, Executor(1));
  const double t_one = seconds_since(t0);
  t0 = Clock::now();
  const auto eight = reconstruct(data, o, Executor(8));
  const double t_eight = seconds_since(t0);
  bool same = one.ranked.size() == eight.ranked.size();
  for (std::size_t i = 0; same && i < one.ranked.size(); ++i)
    same = one.ranked[i].config.index == eight.ranked[i].config.index && one.ranked[i].score == eight.ranked[i].score;
  const double t_best = std::min(t_one, t_eight);
  (void)threads;
  return {same && t_best <= 60.0,
          fmt("1e5 candidates x 2 datasets x 200 points: rankings at 1 and 8 workers %s; %.1f s / %.1f s on %u core(s) "
              "(<= 60 s)",
              same ? "identical" : "DIFFER", t_one, t_eight, std::thread::hardware_concurrency())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  const unsigned threads = std::max(1u, std::thread::hardware_concurrency());

  const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
      {1, criterion1},
      {2, [&] { return criterion2(threads); }},
      {3, criterion3},
      {4, [&] { return criterion4(threads); }},
      {5, criterion5},
      {6, criterion6},
      {7, criterion7},
      {8, criterion8},
      {9, [&] { return criterion9(threads); }},
  };
  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::printf("criterion %d: %s - %s\n", id, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
