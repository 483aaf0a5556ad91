// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spinprobe/charge_dynamics.hpp"
#include "spinprobe/coherence.hpp"
#include "spinprobe/least_squares.hpp"

namespace spinprobe {

// ---------------------------------------------------------------------------------------
// Exponential relaxation
// ---------------------------------------------------------------------------------------

/// y = offset + amplitude * exp(-rate * t). Params "rate", "amplitude", "offset".
struct MonoExponentialFit {
  double rate = 0.0;
  double amplitude = 0.0;
  double offset = 0.0;
  FitResult fit;
};

/// Needs at least 4 points. Constant data leaves the rate unidentifiable and returns
/// converged = false.
MonoExponentialFit fit_mono_exponential(std::span<const double> t, std::span<const double> y);

/// Dark relaxation rho(t) = rho_ss + (rho0 - rho_ss) exp(-t / t_c).
struct ChargeRelaxationFit {
  double rho0 = 0.0;
  double rho_ss = 0.0;
  double t_c = 0.0;
  FitResult fit;

  /// Rate model whose dark rates reproduce (rho_ss, t_c).
  ChargeRateModel dark_rates(ChargeRateModel base = {}) const;
};

ChargeRelaxationFit fit_charge_relaxation(std::span<const double> t, std::span<const double> rho);

// ---------------------------------------------------------------------------------------
// Saturation
// ---------------------------------------------------------------------------------------

struct SaturationFit {
  SaturationModel model;
  double low_power_slope = 0.0;  ///< 1/(s W)
  double cross_section = 0.0;    ///< m^2
  /// Set when the data do not reach the knee: fitted p_sat above 10x the largest power, or a
  /// fit that did not converge.
  bool p_sat_unidentifiable = false;
  FitResult fit;  ///< params "gamma_sat", "p_sat" in SI units
};

/// Fits Gamma(P) = gamma_sat P / (P + p_sat). Powers are scaled by their maximum internally,
/// so scaling every power by c scales p_sat by c. Needs at least 3 distinct powers.
SaturationFit fit_saturation(std::span<const double> powers_w, std::span<const double> rates,
                             const PhotonFluxModel& flux = {});

// ---------------------------------------------------------------------------------------
// ODMR Stark shifts
// ---------------------------------------------------------------------------------------

struct OdmrFit {
  std::vector<double> d_stark;  ///< Hz, one per defect
  double contrast = 0.0;
  FitResult fit;  ///< params "d_0", "d_1", ..., "contrast"
};

struct OdmrFitOptions {
  double grid_min = -200e3;  ///< Hz, coarse search range per shift
  double grid_max = 200e3;
  double grid_step = 5e3;
  int grid_sweeps = 2;
  LmOptions lm;
};

/// Fits the Stark shifts with rho and a held at the values in `defects` (their d_stark is
/// ignored). The profile shape and linewidth come from `options`; the contrast is fitted.
OdmrFit fit_odmr(std::span<const double> freq, std::span<const double> amplitude,
                 std::span<const NsDefect> defects, const OdmrOptions& options = {},
                 const OdmrFitOptions& fit_options = {});

// ---------------------------------------------------------------------------------------
// SQ/DQ noise decomposition
// ---------------------------------------------------------------------------------------

struct NoiseRates {
  double gamma_mag = 0.0;   ///< 1/s
  double gamma_elec = 0.0;  ///< 1/s
  std::vector<std::string> warnings;
};

/// (Gamma_SQ, Gamma_DQ)^T = matrix * (Gamma_mag, Gamma_elec)^T. The default has the DQ
/// coherence twice as sensitive to magnetic noise and blind to axial electric noise.
struct NoiseModel {
  Eigen::Matrix2d matrix = (Eigen::Matrix2d() << 1.0, 1.0, 2.0, 0.0).finished();
};

std::pair<double, double> forward_noise(const NoiseRates& rates, const NoiseModel& model = {});

/// Inverts the noise model. Negative components are kept and flagged in `warnings`.
NoiseRates extract_noise(double gamma_sq, double gamma_dq, const NoiseModel& model = {});

}  // namespace spinprobe
