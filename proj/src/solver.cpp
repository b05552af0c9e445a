#include "rmhe/solver.hpp"

#include <cmath>
#include <limits>

namespace rmhe {

namespace {

constexpr double kMaxDamping = 1e20;
constexpr double kMinDamping = 1e-15;

bool gradient_small(double gnorm, double f, const SolverConfig& config) {
  return gnorm < config.gradient_tolerance * std::max(1.0, std::abs(f));
}

// Differences this small are indistinguishable from rounding in f.
bool within_roundoff(double f_new, double f_old) {
  const double scale = std::max({std::abs(f_new), std::abs(f_old), 1e-300});
  return std::abs(f_new - f_old) <= 64.0 * std::numeric_limits<double>::epsilon() * scale;
}

void bfgs_update(Matrix& b, const Vector& s, const Vector& y) {
  const double sy = s.dot(y);
  if (!(sy > 1e-12 * s.norm() * y.norm())) return;
  const Vector bs = b * s;
  b += y * y.transpose() / sy - bs * bs.transpose() / s.dot(bs);
  b = symmetrized(b);
}

}  // namespace

void SolverConfig::validate() const {
  if (max_iterations < 1) throw DomainError("solver max_iterations must be >= 1");
  if (!(gradient_tolerance > 0.0) || !(step_tolerance > 0.0)) throw DomainError("solver tolerances must be > 0");
  if (!(initial_damping > 0.0)) throw DomainError("solver initial_damping must be > 0");
  if (!(damping_increase > 1.0) || !(damping_decrease > 0.0 && damping_decrease < 1.0)) {
    throw DomainError("solver damping schedule must increase by >1 and decrease by a factor in (0,1)");
  }
}

std::string to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Converged:
      return "converged";
    case SolveStatus::MaxIterations:
      return "max_iterations";
    case SolveStatus::Stalled:
      return "stalled";
  }
  return "unknown";
}

SolveResult minimize(const ObjectiveFn& f, const GradientFn& grad, const CurvatureFn& curvature, const Vector& x0,
                     const SolverConfig& config) {
  config.validate();
  SolveResult out;
  out.x = x0;
  double fx = f(x0);
  Vector g = grad(x0);
  if (!std::isfinite(fx) || !g.allFinite()) throw SolverInputError("objective or gradient is not finite at x0");
  if (g.size() != x0.size()) throw DimensionError("gradient size does not match x0");

  SolveReport& report = out.report;
  report.objective_history.push_back(fx);
  auto finish = [&](SolveStatus status) {
    report.status = status;
    report.final_objective = fx;
    report.final_gradient_norm = g.norm();
    return out;
  };
  if (gradient_small(g.norm(), fx, config)) return finish(SolveStatus::Converged);

  const auto dim = x0.size();
  Matrix secant = Matrix::Identity(dim, dim);
  double lambda = config.initial_damping;

  while (report.iterations < config.max_iterations) {
    ++report.iterations;
    const Matrix h = curvature ? curvature(out.x) : secant;
    if (!h.allFinite()) return finish(SolveStatus::Stalled);
    const double diag_floor = 1e-12 * std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
    const Vector damping_diag = h.diagonal().cwiseAbs().cwiseMax(diag_floor);

    bool accepted = false;
    Vector step;
    Vector x_new;
    Vector g_new;
    double f_new = 0.0;
    while (!accepted) {
      if (lambda > kMaxDamping) return finish(SolveStatus::Stalled);
      Matrix damped = h;
      damped.diagonal() += lambda * damping_diag;
      Eigen::LLT<Matrix> llt(damped);
      if (llt.info() != Eigen::Success) {
        lambda *= config.damping_increase;
        continue;
      }
      step = llt.solve(-g);
      x_new = out.x + step;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new < fx) {
        accepted = true;
      } else if (std::isfinite(f_new) && within_roundoff(f_new, fx)) {
        g_new = grad(x_new);
        accepted = g_new.allFinite() && g_new.norm() < g.norm();
      }
      if (!accepted) lambda *= config.damping_increase;
    }

    if (g_new.size() == 0) g_new = grad(x_new);
    if (!g_new.allFinite()) return finish(SolveStatus::Stalled);
    if (!curvature) bfgs_update(secant, step, g_new - g);
    const double x_norm = out.x.norm();
    out.x = std::move(x_new);
    fx = f_new;
    g = std::move(g_new);
    report.objective_history.push_back(fx);
    lambda = std::max(kMinDamping, lambda * config.damping_decrease);

    if (gradient_small(g.norm(), fx, config)) return finish(SolveStatus::Converged);
    if (step.norm() < config.step_tolerance * (1.0 + x_norm)) return finish(SolveStatus::Converged);
  }
  return finish(SolveStatus::MaxIterations);
}

Vector finite_difference_gradient(const ObjectiveFn& f, const Vector& x, double step) {
  if (!(step > 0.0)) throw DomainError("finite-difference step must be > 0");
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double fp = f(probe);
    probe[i] = x[i] - step;
    const double fm = f(probe);
    probe[i] = x[i];
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

}  // namespace rmhe
