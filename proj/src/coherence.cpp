// SPDX-License-Identifier: Apache-2.0
#include "spinprobe/coherence.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spinprobe/constants.hpp"
#include "spinprobe/errors.hpp"

namespace spinprobe {

void CoherenceCurve::validate() const {
  if (tau.size() != signal.size()) throw DomainError("coherence curve: tau and signal lengths differ");
  for (std::size_t i = 1; i < tau.size(); ++i)
    if (!(tau[i] > tau[i - 1])) throw DomainError("coherence curve: delays must be strictly increasing");
  for (const auto& s : signal)
    if (std::abs(s) > 1.0 + 1e-9) throw DomainError("coherence curve: |S| exceeds 1");
}

std::vector<double> CoherenceCurve::in_phase() const {
  std::vector<double> out(signal.size());
  std::transform(signal.begin(), signal.end(), out.begin(), [](const Complex& s) { return s.real(); });
  return out;
}

std::vector<double> CoherenceCurve::out_of_phase() const {
  std::vector<double> out(signal.size());
  std::transform(signal.begin(), signal.end(), out.begin(), [](const Complex& s) { return s.imag(); });
  return out;
}

double background_decay(double tau, double gamma, double n) {
  if (!(tau >= 0.0)) throw DomainError("delay must be non-negative");
  if (!(gamma >= 0.0)) throw DomainError("decay rate must be non-negative");
  if (!(n >= 0.5 && n <= 3.0)) throw DomainError("stretch exponent must lie in [0.5, 3]");
  if (tau == 0.0 || gamma == 0.0) return 1.0;
  return std::exp(-std::pow(gamma * tau, n));
}

Complex single_spin_coherence(double tau, const ProbeSpin& probe, double a_hz, double p) {
  if (!(std::abs(p) <= 1.0)) throw DomainError("polarization must lie in [-1, 1]");
  const double phase = constants::pi * a_hz * tau;  // 2 pi a tau / 2
  return background_decay(tau, probe.gamma_bg, probe.stretch_n) *
         Complex(std::cos(phase), p * std::sin(phase));
}

Complex deer_signal(double tau, const ProbeSpin& probe, double eta,
                    std::span<const PolarizedDefect> defects) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("eta must lie in [0, 1]");
  Complex product(background_decay(tau, probe.gamma_bg, probe.stretch_n), 0.0);
  for (const auto& pd : defects) {
    pd.defect.validate();
    if (!(std::abs(pd.polarization) <= 1.0)) throw DomainError("polarization must lie in [-1, 1]");
    const double weight = eta * pd.defect.rho;
    const double phase = constants::pi * pd.defect.a_dipolar * tau;
    product *= Complex((1.0 - weight) + weight * std::cos(phase), weight * pd.polarization * std::sin(phase));
  }
  return product;
}

CoherenceCurve deer_curve(std::span<const double> tau, const ProbeSpin& probe, double eta,
                          std::span<const PolarizedDefect> defects) {
  CoherenceCurve curve;
  curve.tau.assign(tau.begin(), tau.end());
  curve.signal.reserve(tau.size());
  for (double t : tau) curve.signal.push_back(deer_signal(t, probe, eta, defects));
  return curve;
}

std::vector<PolarizedDefect> unpolarized(std::span<const NsDefect> defects) {
  std::vector<PolarizedDefect> out;
  out.reserve(defects.size());
  for (const auto& d : defects) out.push_back({d, 0.0});
  return out;
}

std::vector<ChargeConfiguration> charge_configurations(std::span<const NsDefect> defects) {
  if (defects.size() > kMaxOdmrDefects)
    throw CapacityError("charge-configuration enumeration is limited to " + std::to_string(kMaxOdmrDefects) +
                        " defects, got " + std::to_string(defects.size()));
  for (const auto& d : defects) d.validate();
  const std::uint32_t count = 1u << defects.size();
  std::vector<ChargeConfiguration> configs;
  configs.reserve(count);
  for (std::uint32_t mask = 0; mask < count; ++mask) {
    double w = 1.0;
    for (std::size_t i = 0; i < defects.size(); ++i)
      w *= (mask >> i) & 1u ? defects[i].rho : 1.0 - defects[i].rho;
    configs.push_back({mask, w});
  }
  return configs;
}

double OdmrSpectrum::total_weight() const {
  double w = 0.0;
  for (const auto& l : lines) w += l.weight;
  return w;
}

double line_profile(LineShape shape, double fwhm, double x) {
  const double half = 0.5 * fwhm;
  if (shape == LineShape::Lorentzian) return half * half / (x * x + half * half);
  // Gaussian with the same FWHM
  const double sigma = fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  return std::exp(-0.5 * x * x / (sigma * sigma));
}

OdmrSpectrum odmr_spectrum(std::span<const NsDefect> defects, const OdmrOptions& options,
                           std::span<const double> freq_grid) {
  if (!(options.linewidth > 0.0)) throw DomainError("ODMR linewidth must be positive");
  if (!(options.contrast >= 0.0)) throw DomainError("ODMR contrast must be non-negative");
  const auto configs = charge_configurations(defects);

  OdmrSpectrum spec;
  spec.linewidth = options.linewidth;
  spec.line_shape = options.line_shape;
  for (const auto& cfg : configs) {
    double shift = 0.0;
    std::vector<double> splittings;
    for (std::size_t i = 0; i < defects.size(); ++i) {
      if ((cfg.neutral_mask >> i) & 1u)
        splittings.push_back(0.5 * defects[i].a_dipolar);
      else
        shift += defects[i].d_stark;
    }
    const std::uint32_t branches = 1u << splittings.size();
    const double w = cfg.weight / static_cast<double>(branches);
    for (std::uint32_t b = 0; b < branches; ++b) {
      double f = shift;
      for (std::size_t k = 0; k < splittings.size(); ++k) f += (b >> k) & 1u ? -splittings[k] : splittings[k];
      spec.lines.push_back({f, w});
    }
  }

  spec.freq.assign(freq_grid.begin(), freq_grid.end());
  spec.amplitude.assign(freq_grid.size(), 0.0);
  for (std::size_t j = 0; j < freq_grid.size(); ++j) {
    double a = 0.0;
    for (const auto& l : spec.lines) a += l.weight * line_profile(options.line_shape, options.linewidth, freq_grid[j] - l.freq);
    spec.amplitude[j] = options.contrast * a;
  }
  return spec;
}

double find_probe_point(const CoherenceCurve& curve) {
  if (curve.tau.empty() || curve.tau.size() != curve.signal.size())
    throw DomainError("find_probe_point: empty or malformed curve");
  std::size_t best = 0;
  double best_value = -1.0;
  for (std::size_t i = 0; i < curve.signal.size(); ++i) {
    const double v = std::abs(curve.signal[i].imag());
    if (v > best_value) {
      best_value = v;
      best = i;
    }
  }
  if (best_value <= 1e-12) throw DomainError("no out-of-phase signal");
  return curve.tau[best];
}

}  // namespace spinprobe
