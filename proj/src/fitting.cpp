// SPDX-License-Identifier: Apache-2.0
#include "spinprobe/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include <Eigen/Dense>

#include "spinprobe/errors.hpp"

namespace spinprobe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_xy(std::span<const double> x, std::span<const double> y, std::size_t min_points, const char* what) {
  if (x.size() != y.size()) throw DomainError(std::string(what) + ": x and y lengths differ");
  if (x.size() < min_points)
    throw DomainError(std::string(what) + ": needs at least " + std::to_string(min_points) + " points");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw DomainError(std::string(what) + ": non-finite data");
}

Eigen::Map<const Eigen::VectorXd> as_vector(std::span<const double> s) {
  return Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
}

std::vector<double> log_grid(double lo, double hi, int n) {
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------------------

MonoExponentialFit fit_mono_exponential(std::span<const double> t_in, std::span<const double> y_in) {
  check_xy(t_in, y_in, 4, "fit_mono_exponential");
  const Eigen::VectorXd t = as_vector(t_in);
  const Eigen::VectorXd y = as_vector(y_in);
  const double span = t.maxCoeff() - t.minCoeff();
  if (!(span > 0.0)) throw DomainError("fit_mono_exponential: time points must not all coincide");
  const Eigen::Index m = t.size();

  // variable projection over a rate grid: amplitude and offset are linear
  double best_ssr = kInf;
  Eigen::Vector3d x0(1.0 / span, 0.0, y.mean());
  Eigen::MatrixXd basis(m, 2);
  basis.col(0).setOnes();
  for (double k : log_grid(1e-2 / span, 1e3 / span, 241)) {
    basis.col(1) = (-k * t).array().exp().matrix();
    const Eigen::Vector2d coef = basis.colPivHouseholderQr().solve(y);
    const double ssr = (basis * coef - y).squaredNorm();
    if (ssr < best_ssr) {
      best_ssr = ssr;
      x0 << k, coef(1), coef(0);
    }
  }

  LeastSquaresProblem p;
  p.n_residuals = static_cast<int>(m);
  p.residual = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    r = (x(2) + x(1) * (-x(0) * t).array().exp()).matrix() - y;
  };
  p.jacobian = [&](const Eigen::VectorXd& x, Eigen::MatrixXd& j) {
    const Eigen::ArrayXd e = (-x(0) * t).array().exp();
    j.col(0) = (-x(1) * t.array() * e).matrix();
    j.col(1) = e.matrix();
    j.col(2).setOnes();
  };
  p.lower = Eigen::Vector3d(std::numeric_limits<double>::min(), -kInf, -kInf);
  p.upper = Eigen::Vector3d(kInf, kInf, kInf);
  const auto outcome = levenberg_marquardt(p, x0);

  MonoExponentialFit out;
  out.rate = outcome.x(0);
  out.amplitude = outcome.x(1);
  out.offset = outcome.x(2);
  out.fit = to_fit_result(outcome, {"rate", "amplitude", "offset"});
  // a vanishing amplitude leaves the rate free even though the scaled Jacobian looks fine
  if (!(std::abs(out.amplitude) > 1e-9 * y.cwiseAbs().maxCoeff())) {
    out.fit.converged = false;
    out.fit.std_errors.clear();
  }
  return out;
}

ChargeRateModel ChargeRelaxationFit::dark_rates(ChargeRateModel base) const {
  base.set_dark_relaxation(std::clamp(rho_ss, 0.0, 1.0), t_c);
  return base;
}

ChargeRelaxationFit fit_charge_relaxation(std::span<const double> t_in, std::span<const double> rho_in) {
  const auto mono = fit_mono_exponential(t_in, rho_in);
  const Eigen::VectorXd t = as_vector(t_in);
  const Eigen::VectorXd y = as_vector(rho_in);

  // refit in the physical parametrization so the standard errors refer to it directly
  LeastSquaresProblem p;
  p.n_residuals = static_cast<int>(t.size());
  p.residual = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    r = (x(1) + (x(0) - x(1)) * (-t.array() / x(2)).exp()).matrix() - y;
  };
  p.jacobian = [&](const Eigen::VectorXd& x, Eigen::MatrixXd& j) {
    const Eigen::ArrayXd e = (-t.array() / x(2)).exp();
    j.col(0) = e.matrix();
    j.col(1) = (1.0 - e).matrix();
    j.col(2) = ((x(0) - x(1)) * e * t.array() / (x(2) * x(2))).matrix();
  };
  p.lower = Eigen::Vector3d(-kInf, -kInf, std::numeric_limits<double>::min());
  p.upper = Eigen::Vector3d(kInf, kInf, kInf);
  const Eigen::Vector3d x0(mono.offset + mono.amplitude, mono.offset, 1.0 / mono.rate);
  const auto outcome = levenberg_marquardt(p, x0);

  ChargeRelaxationFit out;
  out.rho0 = outcome.x(0);
  out.rho_ss = outcome.x(1);
  out.t_c = outcome.x(2);
  out.fit = to_fit_result(outcome, {"rho0", "rho_ss", "t_c"});
  out.fit.converged = out.fit.converged && mono.fit.converged;
  if (!out.fit.converged) out.fit.std_errors.clear();
  return out;
}

// ---------------------------------------------------------------------------------------

SaturationFit fit_saturation(std::span<const double> powers, std::span<const double> rates,
                             const PhotonFluxModel& flux) {
  check_xy(powers, rates, 3, "fit_saturation");
  std::set<double> distinct;
  for (double p : powers) {
    if (p < 0.0) throw DomainError("fit_saturation: powers must be non-negative");
    distinct.insert(p);
  }
  if (distinct.size() < 3) throw DomainError("fit_saturation: needs at least 3 distinct powers");

  const double p_scale = *std::max_element(powers.begin(), powers.end());
  const Eigen::VectorXd y_raw = as_vector(rates);
  const double y_scale = y_raw.cwiseAbs().maxCoeff();
  if (!(p_scale > 0.0) || !(y_scale > 0.0)) throw FitQualityError("fit_saturation: all powers or all rates are zero");
  const Eigen::ArrayXd p_hat = as_vector(powers).array() / p_scale;
  const Eigen::VectorXd y = y_raw / y_scale;
  const Eigen::Index m = y.size();

  double best_ssr = kInf;
  Eigen::Vector2d x0(1.0, 1.0);
  for (double x : log_grid(1e-3, 1e3, 121)) {
    const Eigen::VectorXd f = (p_hat / (p_hat + x)).matrix();
    const double g = std::max(0.0, f.dot(y) / f.squaredNorm());
    const double ssr = (g * f - y).squaredNorm();
    if (ssr < best_ssr) {
      best_ssr = ssr;
      x0 << g, x;
    }
  }

  LeastSquaresProblem prob;
  prob.n_residuals = static_cast<int>(m);
  prob.residual = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    r = (x(0) * p_hat / (p_hat + x(1))).matrix() - y;
  };
  prob.jacobian = [&](const Eigen::VectorXd& x, Eigen::MatrixXd& j) {
    const Eigen::ArrayXd denom = p_hat + x(1);
    j.col(0) = (p_hat / denom).matrix();
    j.col(1) = (-x(0) * p_hat / (denom * denom)).matrix();
  };
  prob.lower = Eigen::Vector2d(0.0, 1e-9);
  prob.upper = Eigen::Vector2d(kInf, 1e9);
  const auto outcome = levenberg_marquardt(prob, x0);
  const FitResult scaled = to_fit_result(outcome, {"gamma_sat", "p_sat"});

  SaturationFit out;
  out.model.gamma_sat = outcome.x(0) * y_scale;
  out.model.p_sat = outcome.x(1) * p_scale;
  out.fit.params = {{"gamma_sat", out.model.gamma_sat}, {"p_sat", out.model.p_sat}};
  if (scaled.converged)
    out.fit.std_errors = {{"gamma_sat", scaled.std_errors.at("gamma_sat") * y_scale},
                          {"p_sat", scaled.std_errors.at("p_sat") * p_scale}};
  out.fit.residual_norm = scaled.residual_norm * y_scale;
  out.fit.n_evals = scaled.n_evals;
  out.fit.converged = scaled.converged;
  out.p_sat_unidentifiable = !scaled.converged || outcome.x(1) > 10.0;
  out.low_power_slope = out.model.gamma_sat / out.model.p_sat;
  out.cross_section = cross_section(out.low_power_slope, flux);
  return out;
}

// ---------------------------------------------------------------------------------------

OdmrFit fit_odmr(std::span<const double> freq, std::span<const double> amplitude,
                 std::span<const NsDefect> defects_in, const OdmrOptions& options,
                 const OdmrFitOptions& fit_options) {
  check_xy(freq, amplitude, 2, "fit_odmr");
  if (defects_in.empty()) throw DomainError("fit_odmr: needs at least one defect");
  if (!(fit_options.grid_step > 0.0) || !(fit_options.grid_max >= fit_options.grid_min))
    throw DomainError("fit_odmr: invalid search grid");
  const Eigen::Index k = static_cast<Eigen::Index>(defects_in.size());
  const Eigen::VectorXd y = as_vector(amplitude);
  std::vector<NsDefect> defects(defects_in.begin(), defects_in.end());
  OdmrOptions unit = options;
  unit.contrast = 1.0;

  auto profile = [&](const Eigen::VectorXd& d) {
    for (Eigen::Index i = 0; i < k; ++i) defects[static_cast<std::size_t>(i)].d_stark = d(i);
    const auto spec = odmr_spectrum(defects, unit, freq);
    return Eigen::Map<const Eigen::VectorXd>(spec.amplitude.data(), static_cast<Eigen::Index>(spec.amplitude.size()))
        .eval();
  };

  // coordinate sweeps over a coarse grid; the contrast is linear and solved in closed form
  Eigen::VectorXd d = Eigen::VectorXd::Zero(k);
  double best_ssr = kInf;
  double contrast = 0.0;
  const int n_grid = static_cast<int>(std::floor((fit_options.grid_max - fit_options.grid_min) / fit_options.grid_step + 1e-9)) + 1;
  for (int sweep = 0; sweep < fit_options.grid_sweeps; ++sweep) {
    for (Eigen::Index i = 0; i < k; ++i) {
      Eigen::VectorXd trial = d;
      double best_value = d(i);
      for (int g = 0; g < n_grid; ++g) {
        trial(i) = fit_options.grid_min + g * fit_options.grid_step;
        const Eigen::VectorXd f = profile(trial);
        const double ff = f.squaredNorm();
        const double c = ff > 0.0 ? std::max(0.0, f.dot(y) / ff) : 0.0;
        const double ssr = (c * f - y).squaredNorm();
        if (ssr < best_ssr) {
          best_ssr = ssr;
          best_value = trial(i);
          contrast = c;
        }
      }
      d(i) = best_value;
    }
  }

  LeastSquaresProblem p;
  p.n_residuals = static_cast<int>(y.size());
  p.residual = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) { r = x(k) * profile(x.head(k)) - y; };
  p.lower = Eigen::VectorXd::Constant(k + 1, -1e7);
  p.upper = Eigen::VectorXd::Constant(k + 1, 1e7);
  p.lower(k) = 0.0;
  p.upper(k) = kInf;
  Eigen::VectorXd x0(k + 1);
  x0 << d, contrast;
  const auto outcome = levenberg_marquardt(p, x0, fit_options.lm);

  std::vector<std::string> names;
  for (Eigen::Index i = 0; i < k; ++i) names.push_back("d_" + std::to_string(i));
  names.push_back("contrast");
  OdmrFit out;
  out.d_stark.assign(outcome.x.data(), outcome.x.data() + k);
  out.contrast = outcome.x(k);
  out.fit = to_fit_result(outcome, names);
  return out;
}

// ---------------------------------------------------------------------------------------

std::pair<double, double> forward_noise(const NoiseRates& rates, const NoiseModel& model) {
  const Eigen::Vector2d out = model.matrix * Eigen::Vector2d(rates.gamma_mag, rates.gamma_elec);
  return {out(0), out(1)};
}

NoiseRates extract_noise(double gamma_sq, double gamma_dq, const NoiseModel& model) {
  if (!(gamma_sq >= 0.0) || !(gamma_dq >= 0.0) || !std::isfinite(gamma_sq) || !std::isfinite(gamma_dq))
    throw DomainError("extract_noise: decay rates must be finite and non-negative");
  const double det = model.matrix.determinant();
  if (!(std::abs(det) > 1e-300) || !model.matrix.allFinite()) throw DomainError("extract_noise: singular noise model");
  const Eigen::Vector2d x = model.matrix.inverse() * Eigen::Vector2d(gamma_sq, gamma_dq);
  NoiseRates out;
  out.gamma_mag = x(0);
  out.gamma_elec = x(1);
  if (out.gamma_mag < 0.0)
    out.warnings.push_back("gamma_mag = " + std::to_string(out.gamma_mag) + " /s is negative (unphysical)");
  if (out.gamma_elec < 0.0)
    out.warnings.push_back("gamma_elec = " + std::to_string(out.gamma_elec) + " /s is negative (unphysical)");
  return out;
}

}  // namespace spinprobe
