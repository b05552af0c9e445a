#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rmhe/linalg.hpp"

namespace rmhe {

struct SolverConfig {
  int max_iterations = 100;
  /// Converged when ‖∇f‖ < gradient_tolerance · max(1, |f|).
  double gradient_tolerance = 1e-8;
  /// Converged when an accepted step satisfies ‖δ‖ < step_tolerance · (1 + ‖x‖).
  double step_tolerance = 1e-12;
  double initial_damping = 1e-3;
  double damping_increase = 10.0;
  double damping_decrease = 0.5;

  void validate() const;
};

enum class SolveStatus { Converged, MaxIterations, Stalled };

std::string to_string(SolveStatus status);

struct SolveReport {
  SolveStatus status = SolveStatus::Stalled;
  int iterations = 0;
  double final_objective = 0.0;
  double final_gradient_norm = 0.0;
  /// f at the start point followed by f after every accepted step.
  std::vector<double> objective_history;
};

struct SolveResult {
  Vector x;
  SolveReport report;
};

using ObjectiveFn = std::function<double(const Vector&)>;
using GradientFn = std::function<Vector(const Vector&)>;
using CurvatureFn = std::function<Matrix(const Vector&)>;

/// Levenberg–Marquardt damped Newton iteration. Uses `curvature` (a
/// Gauss-Newton normal matrix or exact Hessian) when given, otherwise a BFGS
/// secant approximation. A trial step is accepted iff f decreases; when the
/// change in f is below floating-point resolution the step is accepted iff
/// the gradient norm decreases instead.
SolveResult minimize(const ObjectiveFn& f, const GradientFn& grad, const CurvatureFn& curvature, const Vector& x0,
                     const SolverConfig& config = {});

/// Central differences, component-wise.
Vector finite_difference_gradient(const ObjectiveFn& f, const Vector& x, double step);

}  // namespace rmhe
