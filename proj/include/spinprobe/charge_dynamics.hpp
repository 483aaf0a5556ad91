// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "spinprobe/defect_model.hpp"
#include "spinprobe/parallel.hpp"

namespace spinprobe {

/// Gamma(P) = gamma_sat * P / (P + p_sat).
struct SaturationModel {
  double gamma_sat = 0.0;  ///< 1/s
  double p_sat = 1.6e-3;   ///< W

  void validate() const;
  /// Initial slope d Gamma / dP at P = 0, 1/(s W).
  double low_power_slope() const { return gamma_sat / p_sat; }
};

double saturation_rate(double power_w, const SaturationModel& model);

/// Converts optical power to photon flux over an illuminated spot.
struct PhotonFluxModel {
  double wavelength = 532e-9;      ///< m
  double numerical_aperture = 0.9;
  /// m^2. Defaults to the Airy disk pi (0.61 lambda / NA)^2 when unset.
  std::optional<double> spot_area;

  double area() const;
  void validate() const;
};

/// Photons m^-2 s^-1 delivered by power_w.
double photon_flux(double power_w, const PhotonFluxModel& model);
double flux_per_watt(const PhotonFluxModel& model);

/// Ionization cross section (m^2) from the low-power slope of the rate, 1/(s W).
/// Throws FitQualityError when the slope is not positive.
double cross_section(double slope_per_w, const PhotonFluxModel& flux);

/// Saturation model used when none is fitted: p_sat = 1.6 mW and a low-power slope that
/// corresponds to a 2.5e-4 A^2 cross section under the default flux model.
SaturationModel default_saturation_model();

/// Rates of the three-state {0 up, 0 down, +} kinetics.
struct ChargeRateModel {
  SaturationModel ionization = default_saturation_model();  ///< r_ion(P)
  double r_rec = 0.0;       ///< recapture + -> 0, 1/s; lands spin-unpolarized
  double r_flip = 0.0;      ///< spin flip rate each direction, 1/s, = 1/(2 T1)
  double r_ion_dark = 0.0;  ///< dark ionization, 1/s
  double r_rec_dark = 0.0;  ///< dark recapture, 1/s

  double r_ion(double power_w) const { return saturation_rate(power_w, ionization); }
  /// Steady-state neutral fraction in the dark.
  double dark_steady_state() const;
  /// 1 / (r_ion_dark + r_rec_dark).
  double dark_relaxation_time() const;
  void validate() const;

  static double flip_rate_from_t1(double t1) { return 0.5 / t1; }
  /// Dark rates reproducing a steady state rho_ss reached with time constant t_c.
  void set_dark_relaxation(double rho_ss, double t_c);
};

/// Generator of d/dt (p_up, p_down, p_plus) at optical power P.
Eigen::Matrix3d charge_generator(const ChargeRateModel& rates, double power_w);

/// Exact solution of the master equation over time t.
ChargeSpinPopulation propagate(const ChargeSpinPopulation& pop, const ChargeRateModel& rates,
                               double power_w, double t);

enum class ChargeState : std::uint8_t { NeutralUp = 0, NeutralDown = 1, Ionized = 2 };

struct ChargeJump {
  double time = 0.0;
  ChargeState state = ChargeState::Ionized;
};

/// Piecewise-constant path of one defect.
struct ChargeTrajectory {
  ChargeState initial = ChargeState::NeutralUp;
  std::vector<ChargeJump> jumps;
  double duration = 0.0;

  ChargeState state_at(double t) const;
};

/// Gillespie sampling of the master equation. Stream `stream` of the counter-based generator
/// under `seed` drives the trajectory, so any (seed, stream) pair is reproducible on its own.
ChargeTrajectory sample_trajectory(const ChargeSpinPopulation& pop0, const ChargeRateModel& rates,
                                   double power_w, double duration, std::uint64_t seed,
                                   std::uint64_t stream = 0);

/// Fraction of trajectories in each state at each checkpoint time. Trajectory i uses stream i.
std::vector<ChargeSpinPopulation> trajectory_occupancy(const ChargeSpinPopulation& pop0,
                                                       const ChargeRateModel& rates, double power_w,
                                                       std::span<const double> checkpoints,
                                                       std::size_t n_trajectories, std::uint64_t seed,
                                                       const Executor& executor = Executor(1));

/// Observed mono-exponential decay rate of the dark-spin polarization: r_ion(P) + 1/T1.
double polarization_decay_rate(double power_w, const ChargeRateModel& rates);

/// Neutral fraction after relaxing in the dark for t from rho0.
double dark_relaxation(double rho0, const ChargeRateModel& rates, double t);

}  // namespace spinprobe
