// SPDX-License-Identifier: Apache-2.0
#include "spinprobe/charge_dynamics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <mutex>

#include "spinprobe/constants.hpp"
#include "spinprobe/errors.hpp"
#include "spinprobe/rng.hpp"

namespace spinprobe {

void SaturationModel::validate() const {
  if (!(gamma_sat > 0.0 && std::isfinite(gamma_sat))) throw DomainError("saturation rate must be positive");
  if (!(p_sat > 0.0 && std::isfinite(p_sat))) throw DomainError("saturation power must be positive");
}

double saturation_rate(double power_w, const SaturationModel& model) {
  if (!(power_w >= 0.0)) throw DomainError("optical power must be non-negative");
  model.validate();
  if (std::isinf(power_w)) return model.gamma_sat;
  return model.gamma_sat * power_w / (power_w + model.p_sat);
}

double PhotonFluxModel::area() const {
  if (spot_area) return *spot_area;
  const double radius = 0.61 * wavelength / numerical_aperture;
  return constants::pi * radius * radius;
}

void PhotonFluxModel::validate() const {
  if (!(wavelength > 0.0)) throw DomainError("wavelength must be positive");
  if (!(numerical_aperture > 0.0 && numerical_aperture <= 1.0)) throw DomainError("NA must lie in (0, 1]");
  if (!(area() > 0.0)) throw DomainError("spot area must be positive");
}

double flux_per_watt(const PhotonFluxModel& model) {
  model.validate();
  return model.wavelength / (constants::planck * constants::speed_of_light * model.area());
}

double photon_flux(double power_w, const PhotonFluxModel& model) {
  if (!(power_w >= 0.0)) throw DomainError("optical power must be non-negative");
  return power_w * flux_per_watt(model);
}

double cross_section(double slope_per_w, const PhotonFluxModel& flux) {
  if (!(slope_per_w > 0.0) || !std::isfinite(slope_per_w))
    throw FitQualityError("ionization slope must be positive to extract a cross section");
  return slope_per_w / flux_per_watt(flux);
}

SaturationModel default_saturation_model() {
  constexpr double sigma = 2.5e-24;  // m^2
  SaturationModel m;
  m.p_sat = 1.6e-3;
  m.gamma_sat = sigma * flux_per_watt(PhotonFluxModel{}) * m.p_sat;
  return m;
}

double ChargeRateModel::dark_steady_state() const {
  const double total = r_ion_dark + r_rec_dark;
  if (total <= 0.0) throw DomainError("dark steady state undefined without dark rates");
  return r_rec_dark / total;
}

double ChargeRateModel::dark_relaxation_time() const {
  const double total = r_ion_dark + r_rec_dark;
  if (total <= 0.0) throw DomainError("dark relaxation time undefined without dark rates");
  return 1.0 / total;
}

void ChargeRateModel::validate() const {
  ionization.validate();
  for (double r : {r_rec, r_flip, r_ion_dark, r_rec_dark})
    if (!(r >= 0.0) || !std::isfinite(r)) throw DomainError("charge rates must be finite and non-negative");
}

void ChargeRateModel::set_dark_relaxation(double rho_ss, double t_c) {
  if (!(rho_ss >= 0.0 && rho_ss <= 1.0)) throw DomainError("steady-state rho must lie in [0, 1]");
  if (!(t_c > 0.0)) throw DomainError("charge relaxation time must be positive");
  r_rec_dark = rho_ss / t_c;
  r_ion_dark = (1.0 - rho_ss) / t_c;
}

Eigen::Matrix3d charge_generator(const ChargeRateModel& rates, double power_w) {
  const double ri = rates.r_ion(power_w);
  const double rf = rates.r_flip;
  const double rr = rates.r_rec;
  Eigen::Matrix3d g;
  g << -(ri + rf), rf, 0.5 * rr,
       rf, -(ri + rf), 0.5 * rr,
       ri, ri, -rr;
  return g;
}

ChargeSpinPopulation propagate(const ChargeSpinPopulation& pop, const ChargeRateModel& rates,
                               double power_w, double t) {
  pop.validate(1e-9);
  rates.validate();
  if (!(t >= 0.0)) throw DomainError("propagation time must be non-negative");
  const double ri = rates.r_ion(power_w);
  const double rr = rates.r_rec;
  // The generator decouples into the spin difference m = up - down (eigenvalue -(ri + 2 rf)),
  // the neutral fraction s = up + down (eigenvalue -(ri + rr)) and the stationary mode.
  const double m0 = pop.p_up - pop.p_down;
  const double s0 = pop.p_up + pop.p_down;
  const double m = m0 * std::exp(-(ri + 2.0 * rates.r_flip) * t);
  double s = s0;
  if (ri + rr > 0.0) {
    const double s_ss = rr / (ri + rr);
    s = s_ss + (s0 - s_ss) * std::exp(-(ri + rr) * t);
  }
  ChargeSpinPopulation out;
  out.p_up = std::max(0.0, 0.5 * (s + m));
  out.p_down = std::max(0.0, 0.5 * (s - m));
  out.p_plus = std::max(0.0, 1.0 - s);
  return out;
}

ChargeState ChargeTrajectory::state_at(double t) const {
  ChargeState s = initial;
  for (const auto& j : jumps) {
    if (j.time > t) break;
    s = j.state;
  }
  return s;
}

ChargeTrajectory sample_trajectory(const ChargeSpinPopulation& pop0, const ChargeRateModel& rates,
                                   double power_w, double duration, std::uint64_t seed,
                                   std::uint64_t stream) {
  pop0.validate(1e-9);
  rates.validate();
  if (!(duration >= 0.0)) throw DomainError("trajectory duration must be non-negative");
  CounterRng rng(seed, stream);
  const double ri = rates.r_ion(power_w);
  const double rf = rates.r_flip;
  const double rr = rates.r_rec;

  ChargeTrajectory traj;
  traj.duration = duration;
  const double u = rng.uniform();
  traj.initial = u < pop0.p_up                ? ChargeState::NeutralUp
                 : u < pop0.p_up + pop0.p_down ? ChargeState::NeutralDown
                                               : ChargeState::Ionized;
  ChargeState state = traj.initial;
  double t = 0.0;
  for (;;) {
    const double out_rate = state == ChargeState::Ionized ? rr : ri + rf;
    if (out_rate <= 0.0) break;
    t += rng.exponential(out_rate);
    if (t > duration) break;
    const double v = rng.uniform() * out_rate;
    switch (state) {
      case ChargeState::NeutralUp:
        state = v < ri ? ChargeState::Ionized : ChargeState::NeutralDown;
        break;
      case ChargeState::NeutralDown:
        state = v < ri ? ChargeState::Ionized : ChargeState::NeutralUp;
        break;
      case ChargeState::Ionized:
        state = v < 0.5 * rr ? ChargeState::NeutralUp : ChargeState::NeutralDown;
        break;
    }
    traj.jumps.push_back({t, state});
  }
  return traj;
}

std::vector<ChargeSpinPopulation> trajectory_occupancy(const ChargeSpinPopulation& pop0,
                                                       const ChargeRateModel& rates, double power_w,
                                                       std::span<const double> checkpoints,
                                                       std::size_t n_trajectories, std::uint64_t seed,
                                                       const Executor& executor) {
  if (n_trajectories == 0) throw DomainError("need at least one trajectory");
  const double horizon = checkpoints.empty() ? 0.0 : *std::max_element(checkpoints.begin(), checkpoints.end());
  const std::size_t n_cp = checkpoints.size();
  // integer counts merged per chunk keep the result independent of the split
  std::vector<std::array<std::uint64_t, 3>> counts(n_cp, {0, 0, 0});
  std::mutex merge_mutex;
  executor.parallel_for(n_trajectories, [&](std::size_t begin, std::size_t end, unsigned) {
    std::vector<std::array<std::uint64_t, 3>> local(n_cp, {0, 0, 0});
    for (std::size_t i = begin; i < end; ++i) {
      const auto traj = sample_trajectory(pop0, rates, power_w, horizon, seed, i);
      for (std::size_t c = 0; c < n_cp; ++c) ++local[c][static_cast<std::size_t>(traj.state_at(checkpoints[c]))];
    }
    std::lock_guard lock(merge_mutex);
    for (std::size_t c = 0; c < n_cp; ++c)
      for (std::size_t k = 0; k < 3; ++k) counts[c][k] += local[c][k];
  });
  std::vector<ChargeSpinPopulation> out;
  out.reserve(n_cp);
  const double n = static_cast<double>(n_trajectories);
  for (const auto& c : counts)
    out.push_back({static_cast<double>(c[0]) / n, static_cast<double>(c[1]) / n, static_cast<double>(c[2]) / n});
  return out;
}

double polarization_decay_rate(double power_w, const ChargeRateModel& rates) {
  return rates.r_ion(power_w) + 2.0 * rates.r_flip;
}

double dark_relaxation(double rho0, const ChargeRateModel& rates, double t) {
  if (!(rho0 >= 0.0 && rho0 <= 1.0)) throw DomainError("rho must lie in [0, 1]");
  if (!(t >= 0.0)) throw DomainError("relaxation time must be non-negative");
  const double rho_ss = rates.dark_steady_state();
  return rho_ss + (rho0 - rho_ss) * std::exp(-t / rates.dark_relaxation_time());
}

}  // namespace spinprobe
