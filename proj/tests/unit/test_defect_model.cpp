// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "spinprobe/constants.hpp"
#include "spinprobe/defect_model.hpp"
#include "spinprobe/errors.hpp"

using namespace spinprobe;

TEST_CASE("dipolar prefactor from independent SI constants") {
  // mu0 (g muB)^2 / (4 pi h), evaluated without the library's gamma/hbar route
  const double mu0 = 4e-7 * std::numbers::pi * (1.0 + 5.5e-10);
  const double g = 2.00231930436256, mub = 9.2740100783e-24, h = 6.62607015e-34;
  const double oracle_hz_nm3 = mu0 * g * g * mub * mub / (4.0 * std::numbers::pi * h) * 1e27;
  CHECK(constants::dipolar_prefactor_hz_nm3 == doctest::Approx(oracle_hz_nm3).epsilon(1e-9));
  CHECK(constants::dipolar_prefactor_hz_nm3 == doctest::Approx(52.041016e6).epsilon(1e-6));
}

TEST_CASE("dipolar coupling angular dependence and scaling") {
  const Vec3 z = Vec3::UnitZ();
  const double pref = constants::dipolar_prefactor_hz_nm3;
  CHECK(dipolar_coupling(Vec3(0, 0, 2), z) == doctest::Approx(-2.0 * pref / 8.0));
  CHECK(dipolar_coupling(Vec3(3, 0, 0), z) == doctest::Approx(pref / 27.0));
  // magic angle
  const double th = std::acos(1.0 / std::sqrt(3.0));
  CHECK(std::abs(dipolar_coupling(Vec3(std::sin(th), 0, std::cos(th)) * 2.0, z)) < 1e-6);
  // r^-3 scaling along a fixed direction
  const Vec3 dir = Vec3(0.3, -0.5, 0.8).normalized();
  CHECK(dipolar_coupling(dir * 2.0) / dipolar_coupling(dir * 4.0) == doctest::Approx(8.0).epsilon(1e-12));
  CHECK_THROWS_AS(dipolar_coupling(Vec3(0.05, 0, 0)), DomainError);
}

TEST_CASE("coupling inversion by brute-force bisection recovers the distance") {
  // along the quantization axis a(r) = -2 pref / r^3; solve a(r) = target by bisection
  const Vec3 axis = default_quant_axis();
  for (double target_khz : {158.6, 125.0, 12.0}) {
    double lo = 0.2, hi = 100.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (std::abs(dipolar_coupling(axis * mid)) > target_khz * 1e3 ? lo : hi) = mid;
    }
    const double closed = std::cbrt(2.0 * constants::dipolar_prefactor_hz_nm3 / (target_khz * 1e3));
    CHECK(lo == doctest::Approx(closed).epsilon(1e-10));
  }
}

TEST_CASE("defect_at keeps coupling and position consistent") {
  const Vec3 r(1.2, -0.7, 2.5);
  const auto d = defect_at(r, 0.4, -3e3);
  REQUIRE(d.position);
  CHECK(d.a_dipolar == doctest::Approx(dipolar_coupling(r)).epsilon(1e-12));
  CHECK_NOTHROW(d.validate(default_quant_axis()));
  NsDefect bad = d;
  bad.a_dipolar *= 1.001;
  CHECK_THROWS_AS(bad.validate(default_quant_axis()), DomainError);
  CHECK_THROWS_AS(d.validate(Vec3::UnitZ()), DomainError);
}

TEST_CASE("defect validation rejects out-of-range rho and non-finite shifts") {
  NsDefect d;
  d.rho = 1.2;
  CHECK_THROWS_AS(d.validate(), DomainError);
  d.rho = 0.5;
  d.d_stark = std::nan("");
  CHECK_THROWS_AS(d.validate(), DomainError);
}

TEST_CASE("geometric mean of neutral fractions") {
  std::vector<double> rho{0.474, 0.302};
  CHECK(geometric_mean_rho(rho) == doctest::Approx(std::sqrt(0.474 * 0.302)).epsilon(1e-14));
  CHECK(geometric_mean_rho(rho) == doctest::Approx(0.3783).epsilon(1e-3));
  std::vector<double> with_zero{0.5, 0.0, 0.9};
  CHECK(geometric_mean_rho(with_zero) == 0.0);
  CHECK_THROWS_AS(geometric_mean_rho(std::vector<double>{}), DomainError);
}

TEST_CASE("sort_by_coupling orders by magnitude") {
  std::vector<NsDefect> d(3);
  d[0].a_dipolar = 10e3;
  d[1].a_dipolar = -150e3;
  d[2].a_dipolar = 90e3;
  sort_by_coupling(d);
  CHECK(d[0].a_dipolar == -150e3);
  CHECK(d[1].a_dipolar == 90e3);
  CHECK(d[2].a_dipolar == 10e3);
}

TEST_CASE("charge-spin population bookkeeping") {
  const auto p = ChargeSpinPopulation::from_rho(0.6, 0.5);
  CHECK(p.rho() == doctest::Approx(0.6));
  CHECK(p.polarization() == doctest::Approx(0.5));
  CHECK(p.total() == doctest::Approx(1.0));
  CHECK(ChargeSpinPopulation::from_rho(0.0).polarization() == 0.0);
  CHECK_THROWS_AS(ChargeSpinPopulation::from_rho(1.5), DomainError);
  ChargeSpinPopulation bad{0.7, 0.7, -0.4};
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("measurement settings") {
  MeasurementSettings m;
  CHECK_NOTHROW(m.validate());
  m.eta = 1.5;
  CHECK_THROWS_AS(m.validate(), DomainError);
  CHECK(eta_one_tone == 0.375);
  CHECK(eta_two_tone == 0.75);
}
