// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace spinprobe {

using Vec3 = Eigen::Vector3d;

/// NV quantization axis [111] in the cubic frame; the doped slab normal is [001].
Vec3 default_quant_axis();

// Frequency convention: every coupling, shift and rate below is stored in Hz (cycles).
// Phases are built as 2*pi*f*t wherever a closed form is written with a*t.

/// One substitutional nitrogen defect seen from the probe.
struct NsDefect {
  double rho = 1.0;        ///< neutral-charge population fraction
  double a_dipolar = 0.0;  ///< secular dipolar coupling to the probe, Hz
  double d_stark = 0.0;    ///< probe line shift while the defect is ionized, Hz
  std::optional<Vec3> position;  ///< nm, relative to the probe

  /// With a position, the coupling must match dipolar_coupling(position, quant_axis) to 1e-9
  /// relative.
  void validate(const Vec3& quant_axis) const;
  void validate() const;
};

/// Builds a defect whose coupling is implied by its position.
NsDefect defect_at(const Vec3& position_nm, double rho, double d_stark,
                   const Vec3& quant_axis = default_quant_axis());

struct ProbeSpin {
  double gamma_bg = 0.0;     ///< background decoherence rate, 1/s
  double stretch_n = 1.0;    ///< stretch exponent of the background decay
  double t1_dark_p1 = 1.9e-3;  ///< dark spin lifetime, s
  Vec3 quant_axis = default_quant_axis();

  void validate() const;
};

struct MeasurementSettings {
  double eta = 0.75;  ///< addressed fraction of the dark-spin sublevel population
  double b_field_gauss = 412.0;
  /// f(down,1), f(down,3), f(up,3), f(up,1) in Hz. Nominal 412 G values; override with measured lines.
  std::array<double, 4> p1_transition_freqs{1.0747e9, 1.0946e9, 1.2146e9, 1.2345e9};
  double laser_wavelength_nm = 532.0;
  double numerical_aperture = 0.9;

  void validate() const;
};

inline constexpr double eta_one_tone = 3.0 / 8.0;
inline constexpr double eta_two_tone = 6.0 / 8.0;

/// Occupation of {|0,up>, |0,down>, |+>} for one defect.
struct ChargeSpinPopulation {
  double p_up = 0.5;
  double p_down = 0.5;
  double p_plus = 0.0;

  double rho() const { return p_up + p_down; }
  /// Spin polarization of the neutral state; zero when the defect is fully ionized.
  double polarization() const;
  double total() const { return p_up + p_down + p_plus; }
  void validate(double tol = 1e-12) const;

  static ChargeSpinPopulation from_rho(double rho, double polarization = 0.0);
};

/// Secular dipolar coupling (Hz) between two free electrons separated by r_nm,
/// (1 - 3cos^2 theta) / r^3 with theta measured from quant_axis. Sign preserved.
/// Throws DomainError for |r| <= 0.1 nm.
double dipolar_coupling(const Vec3& r_nm, const Vec3& quant_axis = default_quant_axis());

/// (prod rho_i)^(1/N). Returns 0 as soon as one rho is 0; throws DomainError on an empty list.
double geometric_mean_rho(std::span<const NsDefect> defects);
double geometric_mean_rho(std::span<const double> rhos);

/// Orders defects by descending |a_dipolar| (index 1 is the strongest coupled).
void sort_by_coupling(std::vector<NsDefect>& defects);

}  // namespace spinprobe
