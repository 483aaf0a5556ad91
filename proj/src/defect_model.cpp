// SPDX-License-Identifier: Apache-2.0
#include "spinprobe/defect_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spinprobe/constants.hpp"
#include "spinprobe/errors.hpp"

namespace spinprobe {

namespace {

bool within_unit(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

}  // namespace

Vec3 default_quant_axis() { return Vec3(1.0, 1.0, 1.0).normalized(); }

void NsDefect::validate() const {
  if (!within_unit(rho)) throw DomainError("rho must lie in [0, 1], got " + std::to_string(rho));
  if (!std::isfinite(a_dipolar)) throw DomainError("dipolar coupling must be finite");
  if (!std::isfinite(d_stark)) throw DomainError("Stark shift must be finite");
}

void NsDefect::validate(const Vec3& quant_axis) const {
  validate();
  if (!position) return;
  const double expected = dipolar_coupling(*position, quant_axis);
  if (std::abs(a_dipolar - expected) > 1e-9 * std::abs(expected))
    throw DomainError("dipolar coupling " + std::to_string(a_dipolar) + " Hz does not match the position (" +
                      std::to_string(expected) + " Hz)");
}

NsDefect defect_at(const Vec3& position_nm, double rho, double d_stark, const Vec3& quant_axis) {
  NsDefect d;
  d.rho = rho;
  d.d_stark = d_stark;
  d.a_dipolar = dipolar_coupling(position_nm, quant_axis);
  d.position = position_nm;
  d.validate(quant_axis);
  return d;
}

void ProbeSpin::validate() const {
  if (!(std::isfinite(gamma_bg) && gamma_bg >= 0.0))
    throw DomainError("background decoherence rate must be >= 0");
  if (!(stretch_n >= 0.5 && stretch_n <= 3.0))
    throw DomainError("stretch exponent must lie in [0.5, 3], got " + std::to_string(stretch_n));
  if (!(t1_dark_p1 > 0.0)) throw DomainError("dark spin T1 must be positive");
  if (std::abs(quant_axis.norm() - 1.0) > 1e-12) throw DomainError("quantization axis must be a unit vector");
}

void MeasurementSettings::validate() const {
  if (!within_unit(eta)) throw DomainError("eta must lie in [0, 1]");
  for (std::size_t i = 0; i < p1_transition_freqs.size(); ++i)
    for (std::size_t j = i + 1; j < p1_transition_freqs.size(); ++j)
      if (p1_transition_freqs[i] == p1_transition_freqs[j])
        throw DomainError("P1 transition frequencies must be distinct");
  if (!(laser_wavelength_nm > 0.0)) throw DomainError("laser wavelength must be positive");
  if (!(numerical_aperture > 0.0 && numerical_aperture <= 1.0))
    throw DomainError("numerical aperture must lie in (0, 1]");
}

double ChargeSpinPopulation::polarization() const {
  const double r = rho();
  if (r <= 0.0) return 0.0;
  return (p_up - p_down) / std::max(r, 1e-300);
}

void ChargeSpinPopulation::validate(double tol) const {
  if (p_up < 0.0 || p_down < 0.0 || p_plus < 0.0) throw DomainError("populations must be non-negative");
  if (std::abs(total() - 1.0) > tol) throw DomainError("populations must sum to 1");
}

ChargeSpinPopulation ChargeSpinPopulation::from_rho(double rho, double polarization) {
  if (!within_unit(rho)) throw DomainError("rho must lie in [0, 1]");
  if (!(std::abs(polarization) <= 1.0)) throw DomainError("polarization must lie in [-1, 1]");
  return {0.5 * rho * (1.0 + polarization), 0.5 * rho * (1.0 - polarization), 1.0 - rho};
}

double dipolar_coupling(const Vec3& r_nm, const Vec3& quant_axis) {
  const double r = r_nm.norm();
  if (!(r > 0.1)) throw DomainError("defect closer than 0.1 nm to the probe");
  const double cos_theta = r_nm.dot(quant_axis) / (r * quant_axis.norm());
  return constants::dipolar_prefactor_hz_nm3 * (1.0 - 3.0 * cos_theta * cos_theta) / (r * r * r);
}

double geometric_mean_rho(std::span<const double> rhos) {
  if (rhos.empty()) throw DomainError("geometric mean of an empty defect list");
  double product = 1.0;
  double log_sum = 0.0;
  for (double r : rhos) {
    if (!within_unit(r)) throw DomainError("rho must lie in [0, 1]");
    if (r == 0.0) return 0.0;
    product *= r;
    log_sum += std::log(r);
  }
  const double inv_n = 1.0 / static_cast<double>(rhos.size());
  // the direct product keeps single-element and all-ones lists exact
  if (product > 1e-280) return std::pow(product, inv_n);
  return std::exp(log_sum * inv_n);
}

double geometric_mean_rho(std::span<const NsDefect> defects) {
  std::vector<double> rhos;
  rhos.reserve(defects.size());
  for (const auto& d : defects) rhos.push_back(d.rho);
  return geometric_mean_rho(std::span<const double>(rhos));
}

void sort_by_coupling(std::vector<NsDefect>& defects) {
  std::stable_sort(defects.begin(), defects.end(), [](const NsDefect& x, const NsDefect& y) {
    return std::abs(x.a_dipolar) > std::abs(y.a_dipolar);
  });
}

}  // namespace spinprobe
