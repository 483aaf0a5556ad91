// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "spinprobe/errors.hpp"
#include "spinprobe/fitting.hpp"
#include "spinprobe/least_squares.hpp"
#include "spinprobe/rng.hpp"

using namespace spinprobe;

namespace {

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(a + (b - a) * i / (n - 1));
  return v;
}

}  // namespace

TEST_CASE("levenberg-marquardt solves the Rosenbrock problem") {
  LeastSquaresProblem p;
  p.n_residuals = 2;
  p.residual = [](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    r(0) = 10.0 * (x(1) - x(0) * x(0));
    r(1) = 1.0 - x(0);
  };
  p.lower = Eigen::Vector2d(-5, -5);
  p.upper = Eigen::Vector2d(5, 5);
  const auto out = levenberg_marquardt(p, Eigen::Vector2d(-1.2, 1.0));
  CHECK(out.converged);
  CHECK(out.x(0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(out.x(1) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("bounds are respected and active bounds do not stall convergence") {
  LeastSquaresProblem p;
  p.n_residuals = 2;
  p.residual = [](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    r(0) = x(0) - 3.0;
    r(1) = x(1) + 1.0;
  };
  p.lower = Eigen::Vector2d(0, 0);
  p.upper = Eigen::Vector2d(1, 1);
  const auto out = levenberg_marquardt(p, Eigen::Vector2d(0.5, 0.5));
  CHECK(out.x(0) == 1.0);
  CHECK(out.x(1) == 0.0);
  CHECK(out.converged);
  CHECK(out.n_evals < 50);
}

TEST_CASE("rank deficiency is detected") {
  Eigen::MatrixXd j(3, 2);
  j << 1, 2, 2, 4, 3, 6;
  CHECK(rank_deficient(j));
  j(2, 1) = 7;
  CHECK_FALSE(rank_deficient(j));
}

TEST_CASE("mono-exponential fit") {
  const auto t = linspace(0, 10e-3, 60);
  std::vector<double> y;
  for (double v : t) y.push_back(0.1 + 0.8 * std::exp(-v / 1.9e-3));
  const auto f = fit_mono_exponential(t, y);
  CHECK(f.fit.converged);
  CHECK(std::abs(f.rate * 1.9e-3 - 1.0) <= 1e-6);
  CHECK(f.amplitude == doctest::Approx(0.8).epsilon(1e-6));
  CHECK(f.fit.std_errors.count("rate") == 1);

  std::vector<double> flat(t.size(), 0.4);
  CHECK_FALSE(fit_mono_exponential(t, flat).fit.converged);
  CHECK_THROWS(fit_mono_exponential(std::vector<double>{0, 1, 2}, std::vector<double>{1, 2, 3}));
}

TEST_CASE("charge relaxation fit with dense noisy sampling") {
  const auto t = linspace(0, 3e-3, 400);
  CounterRng rng(5, 0);
  std::vector<double> rho;
  for (double v : t) rho.push_back(0.378 + (0.95 - 0.378) * std::exp(-v / 410e-6) + 0.005 * rng.normal());
  const auto f = fit_charge_relaxation(t, rho);
  CHECK(f.fit.converged);
  CHECK(f.t_c == doctest::Approx(410e-6).epsilon(0.05));
  CHECK(f.rho_ss == doctest::Approx(0.378).epsilon(0.02));
  const auto rates = f.dark_rates();
  CHECK(rates.dark_steady_state() == doctest::Approx(f.rho_ss));
  CHECK(rates.dark_relaxation_time() == doctest::Approx(f.t_c));
}

TEST_CASE("saturation fit and identifiability") {
  const std::vector<double> powers{36e-6, 100e-6, 300e-6, 1e-3, 2e-3, 3.3e-3};
  SaturationModel truth{26226.9, 1.6e-3};
  std::vector<double> rates;
  for (double p : powers) rates.push_back(saturation_rate(p, truth));
  const auto f = fit_saturation(powers, rates);
  CHECK(f.fit.converged);
  CHECK_FALSE(f.p_sat_unidentifiable);
  CHECK(f.model.p_sat == doctest::Approx(1.6e-3).epsilon(1e-6));
  CHECK(f.cross_section == doctest::Approx(2.5e-24).epsilon(1e-4));

  // scaling every power by c scales p_sat by c
  std::vector<double> scaled;
  for (double p : powers) scaled.push_back(p * 7.0);
  CHECK(fit_saturation(scaled, rates).model.p_sat == doctest::Approx(7.0 * 1.6e-3).epsilon(1e-6));

  // data well below the knee cannot pin p_sat
  std::vector<double> linear;
  for (double p : powers) linear.push_back(1e7 * p);
  CHECK(fit_saturation(powers, linear).p_sat_unidentifiable);
  CHECK_THROWS(fit_saturation(std::vector<double>{1e-3, 1e-3, 2e-3}, std::vector<double>{1, 1, 2}));
}

TEST_CASE("odmr Stark shifts are recovered, and are unidentifiable without ionization") {
  std::vector<NsDefect> d{{0.474, 158.6e3, -41e3, {}}, {0.302, 125e3, -33e3, {}}};
  const auto grid = linspace(-300e3, 300e3, 241);
  OdmrOptions opt;
  opt.contrast = 0.1;
  const auto spec = odmr_spectrum(d, opt, grid);
  const auto f = fit_odmr(grid, spec.amplitude, d, opt);
  CHECK(f.fit.converged);
  CHECK(f.d_stark[0] == doctest::Approx(-41e3).epsilon(1e-6));
  CHECK(f.d_stark[1] == doctest::Approx(-33e3).epsilon(1e-6));
  CHECK(f.contrast == doctest::Approx(0.1).epsilon(1e-6));

  std::vector<NsDefect> neutral{{1.0, 158.6e3, 0.0, {}}};
  const auto s2 = odmr_spectrum(neutral, opt, grid);
  const auto f2 = fit_odmr(grid, s2.amplitude, neutral, opt);
  CHECK((!f2.fit.converged || !std::isfinite(f2.fit.std_errors.count("d_0") ? f2.fit.std_errors.at("d_0") : INFINITY)));
}

TEST_CASE("noise extraction inverts the forward model") {
  CounterRng rng(8, 0);
  for (int i = 0; i < 100; ++i) {
    NoiseRates r{1e3 * rng.uniform(), 1e3 * rng.uniform(), {}};
    const auto [sq, dq] = forward_noise(r);
    const auto back = extract_noise(sq, dq);
    CHECK(std::abs(back.gamma_mag - r.gamma_mag) <= 1e-12 * std::max(1.0, r.gamma_mag));
    CHECK(std::abs(back.gamma_elec - r.gamma_elec) <= 1e-12 * std::max(1.0, r.gamma_elec));
    CHECK(back.warnings.empty());
  }
  // DQ twice as sensitive to magnetic noise and blind to electric noise
  const auto [sq, dq] = forward_noise({10.0, 5.0, {}});
  CHECK(sq == 15.0);
  CHECK(dq == 20.0);
  CHECK_FALSE(extract_noise(1.0, 10.0).warnings.empty());
  CHECK_THROWS(extract_noise(-1.0, 1.0));
  NoiseModel singular;
  singular.matrix << 1, 1, 1, 1;
  CHECK_THROWS(extract_noise(1.0, 1.0, singular));
}
