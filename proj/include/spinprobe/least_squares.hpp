// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace spinprobe {

struct FitResult {
  std::map<std::string, double> params;
  std::map<std::string, double> std_errors;  ///< empty unless converged
  double residual_norm = 0.0;                ///< Euclidean norm of the residual vector
  int n_evals = 0;
  bool converged = false;
};

/// Box-constrained nonlinear least squares, min 0.5 |r(x)|^2 with lower <= x <= upper.
struct LeastSquaresProblem {
  int n_residuals = 0;
  std::function<void(const Eigen::VectorXd& x, Eigen::VectorXd& r)> residual;
  /// Optional analytic Jacobian; central differences are used when empty.
  std::function<void(const Eigen::VectorXd& x, Eigen::MatrixXd& jac)> jacobian;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct LmOptions {
  int max_iterations = 200;
  double ftol = 1e-14;      ///< relative cost decrease
  double xtol = 1e-13;      ///< relative step
  double gtol = 1e-14;      ///< projected gradient, relative to the cost scale
  double initial_lambda = 1e-3;
  double fd_step = 1e-6;    ///< relative central-difference step
};

struct LmOutcome {
  Eigen::VectorXd x;
  Eigen::VectorXd residual;
  Eigen::MatrixXd jacobian;  ///< at x
  double cost = 0.0;         ///< 0.5 |r|^2
  int n_evals = 0;
  int iterations = 0;
  bool converged = false;
};

/// Projected Levenberg-Marquardt with Marquardt diagonal scaling. Steps are clipped to the
/// box; a step is kept only if it lowers the cost.
LmOutcome levenberg_marquardt(const LeastSquaresProblem& problem, Eigen::VectorXd x0,
                              const LmOptions& options = {});

/// True when the column-scaled Jacobian has numerical rank below its column count.
bool rank_deficient(const Eigen::MatrixXd& jac, double rcond = 1e-9);

/// Standard errors sqrt(diag(s^2 (J^T J)^-1)) with s^2 = |r|^2 / max(m - n, 1).
Eigen::VectorXd standard_errors(const Eigen::MatrixXd& jac, const Eigen::VectorXd& residual);

/// Packs an outcome into a FitResult. Rank-deficient Jacobians clear `converged`.
FitResult to_fit_result(const LmOutcome& outcome, const std::vector<std::string>& names);

}  // namespace spinprobe
