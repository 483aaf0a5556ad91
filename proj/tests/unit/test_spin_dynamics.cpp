// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "spinprobe/errors.hpp"
#include "spinprobe/spin_dynamics.hpp"

using namespace spinprobe;

namespace {

constexpr double kPi = 3.14159265358979323846;

SpinRegister one_dark(double a = 150e3, double p = 0.0) {
  std::vector<double> c{a}, pol{p};
  return SpinRegister::prepare(c, pol);
}

MicrowaveSegment probe_pi(double rabi = 1e6) {
  return MicrowaveSegment{{Drive{DriveTarget::Probe, 0, 0.0, rabi, 0.0}}, 0.5 / rabi, false};
}

}  // namespace

TEST_CASE("register preparation") {
  const auto r = one_dark(100e3, 0.6);
  CHECK(r.dimension() == 4);
  CHECK(r.probe_polarization() == doctest::Approx(1.0));
  CHECK(r.dark_polarization(0) == doctest::Approx(0.6));
  CHECK_NOTHROW(r.validate());
  CHECK_THROWS_AS(r.dark_polarization(1), DomainError);
  std::vector<double> four(4, 0.0);
  CHECK_THROWS_AS(SpinRegister::prepare(four, four), DomainError);
}

TEST_CASE("resonant pulse rotates the probe") {
  const auto r = evolve(one_dark(0.0), probe_pi());
  CHECK(r.probe_polarization() == doctest::Approx(-1.0).epsilon(1e-12));
  auto half = probe_pi();
  half.duration *= 0.5;
  CHECK(std::abs(evolve(one_dark(0.0), half).probe_polarization()) < 1e-12);
}

TEST_CASE("hamiltonian is hermitian and rejects bad drive targets") {
  auto reg = one_dark(120e3);
  MicrowaveSegment seg{{Drive{DriveTarget::Probe, 0, 5e3, 300e3, 0.3}, Drive{DriveTarget::DarkSpin, 0, -2e3, 300e3, 1.1}},
                       1e-6, false};
  const CMatrix h = build_hamiltonian(seg, reg);
  CHECK((h - h.adjoint()).norm() < 1e-12);
  seg.drives[1].index = 1;
  CHECK_THROWS_AS(build_hamiltonian(seg, reg), DomainError);
}

TEST_CASE("secular spin-lock Hamiltonian commutes with the drive") {
  std::vector<double> c{158.6e3, 125e3}, p{0.0, 0.0};
  const auto reg = SpinRegister::prepare(c, p);
  MicrowaveSegment lock{{Drive{DriveTarget::Probe, 0, 0.0, 400e3, kPi / 2}, Drive{DriveTarget::DarkSpin, 0, 0.0, 400e3, kPi / 2},
                         Drive{DriveTarget::DarkSpin, 1, 0.0, 400e3, kPi / 2}},
                        1e-6, true};
  const CMatrix h = build_hamiltonian(lock, reg);
  auto drive_only = reg;
  drive_only.couplings = {0.0, 0.0};
  const CMatrix d = build_hamiltonian(lock, drive_only);
  CHECK((h * d - d * h).norm() < 1e-6 * d.norm() * d.norm());
}

TEST_CASE("laser repolarization matches the analytic exponential") {
  LaserResponse lr;
  CHECK(lr.repolarization_time(36e-6) == doctest::Approx(2.8e-6));
  CHECK(lr.repolarization_time(3300e-6) == doctest::Approx(0.24e-6));
  CHECK_THROWS_AS(lr.repolarization_time(10e-6), DomainError);
  CHECK_THROWS_AS(lr.repolarization_time(5e-3), DomainError);
  lr.allow_extrapolation = true;
  CHECK_NOTHROW(lr.repolarization_time(5e-3));

  const double power = 500e-6;
  const double t_r = LaserResponse{}.repolarization_time(power);
  const double gamma = LaserResponse{}.dark_depolarization_rate(power);
  auto reg = evolve(one_dark(0.0, 1.0), probe_pi());  // probe in m_s = -1
  for (double t : {0.2e-6, 1e-6, 3e-6}) {
    const auto out = laser_repolarize(reg, power, t);
    CHECK(out.probe_polarization() == doctest::Approx(1.0 - 2.0 * std::exp(-t / t_r)).epsilon(1e-9));
    CHECK(out.dark_polarization(0) == doctest::Approx(std::exp(-gamma * t)).epsilon(1e-9));
    CHECK_NOTHROW(out.validate());
  }
  CHECK_THROWS_AS(laser_repolarize(reg, 1e-6, 1e-6), DomainError);
}

TEST_CASE("dark-spin T1 in the Lindblad path") {
  auto reg = one_dark(0.0, 1.0);
  reg.dark_t1 = 1.9e-3;
  for (double t : {1e-4, 1e-3, 5e-3}) {
    const auto out = evolve(reg, DelaySegment{t});
    CHECK(out.dark_polarization(0) == doctest::Approx(std::exp(-t / 1.9e-3)).epsilon(1e-9));
  }
}

TEST_CASE("probe reset keeps the dark reduced state") {
  auto reg = evolve(one_dark(0.0, 0.4), probe_pi());
  const auto out = reset_probe(reg);
  CHECK(out.probe_polarization() == doctest::Approx(1.0));
  CHECK(out.dark_polarization(0) == doctest::Approx(0.4));
  CHECK(out.state.trace().real() == doctest::Approx(1.0));
}

TEST_CASE("hamiltonian DEER agrees with the closed form") {
  std::vector<double> tau;
  for (int i = 0; i < 40; ++i) tau.push_back(10e-6 * i / 39.0);
  ProbeSpin probe;
  for (double rho : {0.0, 0.474, 1.0}) {
    NsDefect a, b;
    a.rho = rho;
    a.a_dipolar = 158.6e3;
    a.d_stark = -30e3;
    b.rho = 1.0 - 0.5 * rho;
    b.a_dipolar = -125e3;
    std::vector<PolarizedDefect> d{{a, 0.3}, {b, -0.5}};
    const auto sim = simulate_deer(tau, probe, 0.75, d);
    const auto cf = deer_curve(tau, probe, 0.75, d);
    double dev = 0.0;
    for (std::size_t i = 0; i < tau.size(); ++i) dev = std::max(dev, std::abs(sim.signal[i] - cf.signal[i]));
    CHECK(dev <= 1e-6);
  }
}

TEST_CASE("pump-probe transfers polarization and conserves the total") {
  PumpProbeSequence seq;
  seq.readout = ReadoutStage{};
  std::vector<NsDefect> d(1);
  d[0].a_dipolar = 158.6e3;
  std::vector<double> pp, pd;
  double first_total = 0.0;
  for (int i = 0; i <= 20; ++i) {
    seq.spin_lock_duration = 10e-6 * i / 20.0;
    const auto rec = run_pump_probe(seq, d);
    if (i == 0) {
      CHECK(std::abs(rec.p_dark[0]) < 1e-12);
      CHECK(std::abs(rec.s_pi2) < 1e-12);
      first_total = rec.p_probe + rec.p_dark[0];
    }
    CHECK(std::abs(rec.p_probe + rec.p_dark[0] - first_total) <= 1e-6);
    pp.push_back(rec.p_probe);
    pd.push_back(rec.p_dark[0]);
  }
  // polarization oscillates between probe and dark spin
  CHECK(*std::min_element(pp.begin(), pp.end()) < 0.0);
  CHECK(*std::max_element(pd.begin(), pd.end()) > 0.9);
}

TEST_CASE("pump-probe sequence validation") {
  PumpProbeSequence seq;
  std::vector<NsDefect> d(1);
  d[0].a_dipolar = 100e3;
  CHECK_THROWS_AS(run_pump_probe(seq, d), SequenceError);
  seq.readout = ReadoutStage{};
  seq.rabi = 0.0;
  CHECK_THROWS_AS(run_pump_probe(seq, d), SequenceError);
  seq.rabi = 400e3;
  CHECK_THROWS_AS(run_pump_probe(seq, std::vector<NsDefect>(4)), DomainError);
}

TEST_CASE("repolarization and dark T1 during the evolution window") {
  PumpProbeSequence seq;
  seq.readout = ReadoutStage{};
  seq.spin_lock_duration = 3.2e-6;
  seq.repolarize = LaserSegment{3300e-6, 2e-6};
  std::vector<NsDefect> d(1);
  d[0].a_dipolar = 158.6e3;
  const auto base = run_pump_probe(seq, d);
  seq.evolution.push_back(LaserSegment{300e-6, 20e-6});
  const auto lit = run_pump_probe(seq, d);
  // the dark polarization decays under illumination
  CHECK(std::abs(lit.p_dark_readout[0]) < std::abs(base.p_dark_readout[0]));
}
