// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "spinprobe/defect_model.hpp"

namespace spinprobe {

using Complex = std::complex<double>;

/// Sampled probe signal S(tau) = S0 + i S_pi/2 on a strictly increasing delay grid (s).
struct CoherenceCurve {
  std::vector<double> tau;
  std::vector<Complex> signal;

  void validate() const;
  std::vector<double> in_phase() const;
  std::vector<double> out_of_phase() const;
};

/// exp(-(gamma tau)^n). Throws DomainError for tau < 0, gamma < 0 or n outside [0.5, 3].
double background_decay(double tau, double gamma, double n);

/// Probe coherence with one strongly coupled spin of polarization p:
/// exp(-(Gamma tau)^n) (cos(2 pi a tau / 2) + i p sin(2 pi a tau / 2)).
Complex single_spin_coherence(double tau, const ProbeSpin& probe, double a_hz, double p);

/// A defect together with the spin polarization of its neutral state.
struct PolarizedDefect {
  NsDefect defect;
  double polarization = 0.0;
};

/// Charge-weighted DEER coherence,
///   exp(-(Gamma tau)^n) prod_i [(1 - eta rho_i) + eta rho_i (cos(phi_i) + i p_i sin(phi_i))],
/// with phi_i = 2 pi a_i tau / 2. The real part is the in-phase signal for unpolarized spins.
Complex deer_signal(double tau, const ProbeSpin& probe, double eta,
                    std::span<const PolarizedDefect> defects);

CoherenceCurve deer_curve(std::span<const double> tau, const ProbeSpin& probe, double eta,
                          std::span<const PolarizedDefect> defects);

std::vector<PolarizedDefect> unpolarized(std::span<const NsDefect> defects);

// ---------------------------------------------------------------------------------------
// ODMR
// ---------------------------------------------------------------------------------------

enum class LineShape { Lorentzian, Gaussian };

/// One charge configuration of N defects: bit i of neutral_mask set = defect i neutral.
struct ChargeConfiguration {
  std::uint32_t neutral_mask = 0;
  double weight = 0.0;
};

inline constexpr std::size_t kMaxOdmrDefects = 12;

/// All 2^N charge configurations with weights prod(rho_i if neutral else 1 - rho_i).
/// Throws CapacityError above kMaxOdmrDefects.
std::vector<ChargeConfiguration> charge_configurations(std::span<const NsDefect> defects);

struct OdmrLine {
  double freq = 0.0;    ///< detuning from the bare probe line, Hz
  double weight = 0.0;
};

struct OdmrSpectrum {
  std::vector<double> freq;       ///< Hz, detuning from the bare probe line
  std::vector<double> amplitude;  ///< dip contrast
  double linewidth = 0.0;         ///< FWHM, Hz
  LineShape line_shape = LineShape::Lorentzian;
  std::vector<OdmrLine> lines;

  double total_weight() const;
};

struct OdmrOptions {
  LineShape line_shape = LineShape::Lorentzian;
  double linewidth = 20e3;  ///< FWHM, Hz
  double contrast = 1.0;    ///< dip depth of a single unit-weight line
};

/// Stick spectrum plus its broadened profile. Each neutral defect splits every line of its
/// configuration into +-a/2; each ionized defect shifts the configuration by d.
OdmrSpectrum odmr_spectrum(std::span<const NsDefect> defects, const OdmrOptions& options,
                           std::span<const double> freq_grid);

/// Peak-normalized line profile evaluated at detuning x.
double line_profile(LineShape shape, double fwhm, double x);

// ---------------------------------------------------------------------------------------

/// Delay that maximizes |Im S|, ties resolved toward the smaller delay.
/// Throws DomainError("no out-of-phase signal") for an all-real curve.
double find_probe_point(const CoherenceCurve& curve);

}  // namespace spinprobe
