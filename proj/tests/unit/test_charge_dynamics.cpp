// SPDX-License-Identifier: Apache-2.0
#include <array>
#include <cmath>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "doctest.h"
#include "spinprobe/charge_dynamics.hpp"
#include "spinprobe/errors.hpp"

using namespace spinprobe;

namespace {

ChargeRateModel sample_rates() {
  ChargeRateModel r;
  r.r_rec = 3000.0;
  r.r_flip = ChargeRateModel::flip_rate_from_t1(1.9e-3);
  return r;
}

/// Integrates the three-state master equation written out by hand, independent of the
/// library's generator matrix.
std::array<double, 3> odeint_reference(std::array<double, 3> p, double ri, double rr, double rf, double t) {
  namespace ode = boost::numeric::odeint;
  auto rhs = [&](const std::array<double, 3>& x, std::array<double, 3>& dx, double) {
    const double up = x[0], down = x[1], plus = x[2];
    dx[0] = -ri * up - rf * up + rf * down + 0.5 * rr * plus;
    dx[1] = -ri * down - rf * down + rf * up + 0.5 * rr * plus;
    dx[2] = ri * (up + down) - rr * plus;
  };
  ode::integrate_adaptive(ode::make_controlled<ode::runge_kutta_dopri5<std::array<double, 3>>>(1e-13, 1e-13), rhs, p,
                          0.0, t, t / 1000.0);
  return p;
}

}  // namespace

TEST_CASE("photon flux and cross section numbers") {
  PhotonFluxModel f;
  CHECK(f.area() == doctest::Approx(4.0846e-13).epsilon(1e-4));
  CHECK(photon_flux(1e-3, f) == doctest::Approx(6.5567e27).epsilon(1e-4));
  const auto sat = default_saturation_model();
  CHECK(sat.p_sat == doctest::Approx(1.6e-3));
  CHECK(sat.low_power_slope() == doctest::Approx(1.63918e7).epsilon(1e-4));
  CHECK(cross_section(sat.low_power_slope(), f) == doctest::Approx(2.5e-24).epsilon(1e-12));
  CHECK_THROWS_AS(cross_section(0.0, f), FitQualityError);
  PhotonFluxModel custom;
  custom.spot_area = 1e-12;
  CHECK(custom.area() == 1e-12);
}

TEST_CASE("saturation curve") {
  SaturationModel m{1000.0, 1e-3};
  CHECK(saturation_rate(1e-3, m) == doctest::Approx(500.0));
  CHECK(saturation_rate(0.0, m) == 0.0);
  // secant slope from zero to P_sat / 100 against the analytic limit
  const double p = m.p_sat / 100.0;
  CHECK(std::abs(saturation_rate(p, m) / p / m.low_power_slope() - 1.0) <= 0.01);
  CHECK_THROWS_AS(saturation_rate(-1.0, m), DomainError);
}

TEST_CASE("exact propagation matches an adaptive ODE integration") {
  const auto rates = sample_rates();
  for (double power : {0.0, 100e-6, 1e-3, 3.3e-3}) {
    for (double t : {1e-6, 5e-5, 3e-4, 2e-3}) {
      const ChargeSpinPopulation p0{0.7, 0.2, 0.1};
      const auto exact = propagate(p0, rates, power, t);
      const auto ref = odeint_reference({0.7, 0.2, 0.1}, rates.r_ion(power), rates.r_rec, rates.r_flip, t);
      CHECK(exact.p_up == doctest::Approx(ref[0]).epsilon(1e-9));
      CHECK(exact.p_down == doctest::Approx(ref[1]).epsilon(1e-9));
      CHECK(exact.p_plus == doctest::Approx(ref[2]).epsilon(1e-9));
    }
  }
}

TEST_CASE("generator columns sum to zero") {
  const auto g = charge_generator(sample_rates(), 1e-3);
  for (int c = 0; c < 3; ++c) CHECK(std::abs(g.col(c).sum()) < 1e-9);
}

TEST_CASE("populations stay normalized and reach the steady state") {
  const auto rates = sample_rates();
  const double power = 1e-3;
  const auto p = propagate(ChargeSpinPopulation::from_rho(1.0, 1.0), rates, power, 1.0);
  const double ri = rates.r_ion(power);
  CHECK(p.total() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(p.p_plus - ri / (ri + rates.r_rec)) <= 1e-9);
  CHECK(std::abs(p.polarization()) < 1e-12);
}

TEST_CASE("polarization decays at r_ion + 1/T1") {
  const auto rates = sample_rates();
  const double power = 200e-6;
  CHECK(polarization_decay_rate(power, rates) == doctest::Approx(rates.r_ion(power) + 1.0 / 1.9e-3));
  const auto p0 = ChargeSpinPopulation::from_rho(1.0, 1.0);
  const double t = 1e-4;
  const auto p = propagate(p0, rates, power, t);
  CHECK(p.p_up - p.p_down == doctest::Approx(std::exp(-polarization_decay_rate(power, rates) * t)));
}

TEST_CASE("dark relaxation rates") {
  ChargeRateModel r;
  r.set_dark_relaxation(0.378, 410e-6);
  CHECK(r.dark_steady_state() == doctest::Approx(0.378));
  CHECK(r.dark_relaxation_time() == doctest::Approx(410e-6));
  CHECK(dark_relaxation(1.0, r, 410e-6) == doctest::Approx(0.378 + 0.622 * std::exp(-1.0)));
  CHECK_THROWS_AS(r.set_dark_relaxation(1.2, 1e-3), DomainError);
  CHECK_THROWS_AS(ChargeRateModel{}.dark_steady_state(), DomainError);
}

TEST_CASE("trajectories are reproducible per stream and independent of worker count") {
  const auto rates = sample_rates();
  const auto p0 = ChargeSpinPopulation::from_rho(1.0, 0.0);
  const auto a = sample_trajectory(p0, rates, 1e-3, 2e-3, 9, 17);
  const auto b = sample_trajectory(p0, rates, 1e-3, 2e-3, 9, 17);
  REQUIRE(a.jumps.size() == b.jumps.size());
  for (std::size_t i = 0; i < a.jumps.size(); ++i) {
    CHECK(a.jumps[i].time == b.jumps[i].time);
    CHECK(a.jumps[i].state == b.jumps[i].state);
  }
  const std::vector<double> cps{0.0, 1e-4, 1e-3};
  const auto one = trajectory_occupancy(p0, rates, 1e-3, cps, 500, 3, Executor(1));
  const auto four = trajectory_occupancy(p0, rates, 1e-3, cps, 500, 3, Executor(4));
  for (std::size_t c = 0; c < cps.size(); ++c) {
    CHECK(one[c].p_up == four[c].p_up);
    CHECK(one[c].p_plus == four[c].p_plus);
  }
}

TEST_CASE("rate validation") {
  ChargeRateModel r;
  r.r_rec = -1.0;
  CHECK_THROWS_AS(r.validate(), DomainError);
  CHECK_THROWS_AS(propagate({}, sample_rates(), -1.0, 1.0), DomainError);
  CHECK_THROWS_AS(propagate({}, sample_rates(), 1e-3, -1.0), DomainError);
}
