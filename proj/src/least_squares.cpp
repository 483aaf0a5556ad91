// SPDX-License-Identifier: Apache-2.0
#include "spinprobe/least_squares.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "spinprobe/errors.hpp"

namespace spinprobe {

namespace {

Eigen::VectorXd clamp(const Eigen::VectorXd& x, const LeastSquaresProblem& p) {
  return x.cwiseMax(p.lower).cwiseMin(p.upper);
}

void finite_difference_jacobian(const LeastSquaresProblem& p, const Eigen::VectorXd& x, double rel_step,
                                Eigen::MatrixXd& jac, int& n_evals) {
  const Eigen::Index n = x.size();
  jac.resize(p.n_residuals, n);
  Eigen::VectorXd rp(p.n_residuals), rm(p.n_residuals);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double h = rel_step * std::max(1.0, std::abs(x(k)));
    Eigen::VectorXd xp = x, xm = x;
    xp(k) = std::min(x(k) + h, p.upper(k));
    xm(k) = std::max(x(k) - h, p.lower(k));
    const double span = xp(k) - xm(k);
    if (span <= 0.0) {
      jac.col(k).setZero();
      continue;
    }
    p.residual(xp, rp);
    p.residual(xm, rm);
    n_evals += 2;
    jac.col(k) = (rp - rm) / span;
  }
}

/// Zeroes gradient components that point out of the box at active bounds.
Eigen::VectorXd projected_gradient(const Eigen::VectorXd& g, const Eigen::VectorXd& x, const LeastSquaresProblem& p) {
  Eigen::VectorXd pg = g;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x(i) <= p.lower(i) && g(i) > 0.0) pg(i) = 0.0;
    if (x(i) >= p.upper(i) && g(i) < 0.0) pg(i) = 0.0;
  }
  return pg;
}

}  // namespace

LmOutcome levenberg_marquardt(const LeastSquaresProblem& p, Eigen::VectorXd x0, const LmOptions& opt) {
  const Eigen::Index n = x0.size();
  if (p.lower.size() != n || p.upper.size() != n) throw DomainError("least squares: bound sizes differ from x0");
  if ((p.lower.array() > p.upper.array()).any()) throw DomainError("least squares: empty box");
  if (p.n_residuals < 1 || !p.residual) throw DomainError("least squares: no residual function");

  LmOutcome out;
  out.x = clamp(x0, p);
  out.residual.resize(p.n_residuals);
  p.residual(out.x, out.residual);
  out.n_evals = 1;
  if (!out.residual.allFinite()) {
    out.cost = std::numeric_limits<double>::infinity();
    return out;
  }
  out.cost = 0.5 * out.residual.squaredNorm();

  auto eval_jacobian = [&](const Eigen::VectorXd& x, Eigen::MatrixXd& jac) {
    if (p.jacobian) {
      jac.resize(p.n_residuals, n);
      p.jacobian(x, jac);
      ++out.n_evals;
    } else {
      finite_difference_jacobian(p, x, opt.fd_step, jac, out.n_evals);
    }
  };

  eval_jacobian(out.x, out.jacobian);
  double lambda = opt.initial_lambda;
  Eigen::VectorXd r_new(p.n_residuals);
  Eigen::MatrixXd jtj(n, n);
  Eigen::VectorXd g(n);

  for (out.iterations = 0; out.iterations < opt.max_iterations; ++out.iterations) {
    jtj.noalias() = out.jacobian.transpose().lazyProduct(out.jacobian);
    g.noalias() = out.jacobian.transpose() * out.residual;
    const double cost_scale = std::max(out.cost, 1e-300);
    if (out.cost <= 1e-32 ||
        projected_gradient(g, out.x, p).lpNorm<Eigen::Infinity>() <= opt.gtol * std::sqrt(2.0 * cost_scale)) {
      out.converged = true;
      break;
    }
    // variables held at a bound by the gradient are frozen for this iteration
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool held = (out.x(i) <= p.lower(i) && g(i) > 0.0) || (out.x(i) >= p.upper(i) && g(i) < 0.0);
      if (!held) free.push_back(i);
    }
    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd jtj_f(nf, nf);
    Eigen::VectorXd g_f(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      g_f(a) = g(free[a]);
      for (Eigen::Index b = 0; b < nf; ++b) jtj_f(a, b) = jtj(free[a], free[b]);
    }
    const Eigen::VectorXd diag = jtj_f.diagonal().cwiseMax(1e-12 * std::max(1.0, jtj_f.diagonal().maxCoeff()));

    bool accepted = false;
    bool tiny_step = false;
    while (!accepted) {
      Eigen::MatrixXd a = jtj_f;
      a.diagonal() += lambda * diag;
      const Eigen::VectorXd step_f = a.ldlt().solve(-g_f);
      Eigen::VectorXd step = Eigen::VectorXd::Zero(n);
      for (Eigen::Index i = 0; i < nf; ++i) step(free[i]) = step_f(i);
      const Eigen::VectorXd x_new = clamp(out.x + step, p);
      const Eigen::VectorXd actual = x_new - out.x;
      if (actual.norm() <= opt.xtol * (out.x.norm() + opt.xtol)) {
        tiny_step = true;
        break;
      }
      p.residual(x_new, r_new);
      ++out.n_evals;
      const double cost_new = r_new.allFinite() ? 0.5 * r_new.squaredNorm() : std::numeric_limits<double>::infinity();
      if (cost_new < out.cost) {
        const double decrease = out.cost - cost_new;
        out.x = x_new;
        out.residual = r_new;
        out.cost = cost_new;
        eval_jacobian(out.x, out.jacobian);
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (decrease <= opt.ftol * cost_scale) tiny_step = true;
      } else {
        lambda *= 4.0;
        if (lambda > 1e16) {
          tiny_step = true;
          break;
        }
      }
    }
    if (tiny_step) {
      out.converged = true;
      break;
    }
  }
  return out;
}

bool rank_deficient(const Eigen::MatrixXd& jac, double rcond) {
  if (jac.cols() == 0) return false;
  if (jac.rows() < jac.cols()) return true;
  Eigen::VectorXd norms = jac.colwise().norm();
  if ((norms.array() == 0.0).any()) return true;
  const Eigen::MatrixXd scaled = jac * norms.cwiseInverse().asDiagonal();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled);
  const auto& s = svd.singularValues();
  return s(s.size() - 1) <= rcond * s(0);
}

Eigen::VectorXd standard_errors(const Eigen::MatrixXd& jac, const Eigen::VectorXd& residual) {
  const Eigen::Index m = jac.rows();
  const Eigen::Index n = jac.cols();
  const double s2 = residual.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(m - n, 1));
  const Eigen::MatrixXd cov = (jac.transpose() * jac).inverse() * s2;
  return cov.diagonal().cwiseMax(0.0).cwiseSqrt();
}

FitResult to_fit_result(const LmOutcome& outcome, const std::vector<std::string>& names) {
  if (static_cast<Eigen::Index>(names.size()) != outcome.x.size()) throw DomainError("parameter name count mismatch");
  FitResult fit;
  for (std::size_t i = 0; i < names.size(); ++i) fit.params[names[i]] = outcome.x(static_cast<Eigen::Index>(i));
  fit.residual_norm = outcome.residual.norm();
  fit.n_evals = outcome.n_evals;
  fit.converged = outcome.converged && std::isfinite(fit.residual_norm) && !rank_deficient(outcome.jacobian);
  if (fit.converged) {
    const Eigen::VectorXd se = standard_errors(outcome.jacobian, outcome.residual);
    for (std::size_t i = 0; i < names.size(); ++i) fit.std_errors[names[i]] = se(static_cast<Eigen::Index>(i));
  }
  return fit;
}

}  // namespace spinprobe
