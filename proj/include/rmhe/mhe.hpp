#pragma once

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rmhe/filters.hpp"
#include "rmhe/models.hpp"
#include "rmhe/solver.hpp"

namespace rmhe {

// ---------------------------------------------------------------------------
// Stage costs

/// Negative Gaussian log-likelihood of the measurement.
struct StandardCost {};

/// β-divergence loss with β ∈ (0, 1).
struct BetaCost {
  double beta = 1e-4;
};

using StageCostKind = std::variant<StandardCost, BetaCost>;

std::string to_string(const StageCostKind& kind);
/// Throws DomainError unless β ∈ (0, 1).
void validate(const StageCostKind& kind);

/// Closed-form β-loss of a Gaussian likelihood N(𝒢(x), R):
///   −(β+1)/(β √((2π)^{βm}|R|^β)) · exp(−β/2 ‖y−𝒢(x)‖²_{R⁻¹}) + ∫ g(y'|x)^{β+1} dy'.
double beta_loss(const Vector& y, const Vector& x, const NonlinearModel& model, double beta);

/// ∫ N(y; μ, R)^{β+1} dy = (β+1)^{−m/2} ((2π)^m |R|)^{−β/2}.
double gaussian_power_integral(const Matrix& R, double beta);

/// Measurement stage cost h(y, x): standard (with its log-normalizer) or β-loss.
double stage_cost_h(const Vector& y, const Vector& x, const NonlinearModel& model, const StageCostKind& kind);

/// Measurement cost evaluated on a residual r = y − 𝒢(x) for a fixed noise
/// covariance. Besides the value it exposes the pieces needed for
/// derivatives: ∇ₓh = −weight(r)·Hᵀ R⁻¹ r, and the middle matrix of the
/// Hessian before the measurement-curvature term.
class MeasurementCost {
 public:
  MeasurementCost(const StageCostKind& kind, const Matrix& R);

  double value(const Vector& r) const { return minimum_ + excess(r); }
  /// value(r) − value(0), computed without cancellation.
  double excess(const Vector& r) const;
  double minimum() const { return minimum_; }
  double weight(const Vector& r) const;
  /// d²h/dr² (m×m); the Hessian in x is Hᵀ·this·H − weight·Σ_k (R⁻¹r)_k ∇²𝒢_k.
  Matrix residual_hessian(const Vector& r) const;
  /// PSD part of residual_hessian, used as the Gauss-Newton weight.
  Matrix residual_hessian_psd(const Vector& r) const;
  const Matrix& information() const { return info_; }

 private:
  bool beta_kind_ = false;
  double beta_ = 0.0;
  double scale_ = 1.0;  // (β+1)/√((2π)^{βm}|R|^β) for β-loss, 1 otherwise
  double minimum_ = 0.0;
  Matrix info_;
};

// ---------------------------------------------------------------------------
// Windows and configuration

enum class ArrivalFilter { KF, EKF, UKF };

std::string to_string(ArrivalFilter filter);

struct MheConfig {
  int horizon = 1;
  StageCostKind stage_cost = StandardCost{};
  SolverConfig solver;
  ArrivalFilter arrival_filter = ArrivalFilter::EKF;
  UkfParams ukf;
  bool warm_start = true;

  void validate() const;
};

/// Anchor plus the most recent measurements: y_{s+1..t} with s = t − horizon.
/// `controls` (when the model takes any) holds u_s .. u_{t−1}.
struct HorizonWindow {
  Vector anchor_mean;
  Matrix anchor_cov;
  std::vector<Vector> measurements;
  std::vector<Vector> controls;
  int t = 0;

  int horizon() const { return static_cast<int>(measurements.size()); }
};

/// Point contamination of the window's empirical measurement distribution:
/// each stage cost h(y_i, ·) becomes (1−ε)h(y_i, ·) + ε h(z_i, ·).
struct WindowContamination {
  std::vector<Vector> z;  // one per window step
  double epsilon = 0.0;
};

/// The window objective J = Γ + Σ {k + h} over a stacked trajectory
/// [x_s; x_{s+1}; …; x_t].
class WindowObjective {
 public:
  WindowObjective(const HorizonWindow& window, const NonlinearModel& model, const StageCostKind& kind,
                  std::optional<WindowContamination> contamination = std::nullopt);

  int state_dim() const { return n_; }
  int horizon() const { return horizon_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(n_) * (horizon_ + 1); }

  double value(const Vector& stacked) const { return constant_ + excess(stacked); }
  /// J minus its additive constants; same minimizer, better conditioned values.
  double excess(const Vector& stacked) const;
  double constant() const { return constant_; }
  Vector gradient(const Vector& stacked) const;
  /// Gauss-Newton normal matrix with the PSD part of the measurement curvature.
  Matrix gauss_newton(const Vector& stacked) const;
  /// Exact second derivative of J.
  Matrix hessian(const Vector& stacked) const;

  /// ∇_{x_i} h(z, x_i) for step i ∈ [1, horizon], an n-vector.
  Vector measurement_gradient(const Vector& stacked, int step, const Vector& z) const;

  Vector stack(std::span<const Vector> states) const;
  std::vector<Vector> unstack(const Vector& stacked) const;

 private:
  Vector control(int step) const;
  auto block(const Vector& v, int i) const { return v.segment(static_cast<Eigen::Index>(i) * n_, n_); }

  const NonlinearModel* model_;
  HorizonWindow window_;
  MeasurementCost meas_;
  std::optional<WindowContamination> contamination_;
  int n_ = 0;
  int horizon_ = 0;
  Matrix anchor_info_;
  Matrix process_info_;
  double constant_ = 0.0;
};

double objective(const HorizonWindow& window, std::span<const Vector> candidate, const NonlinearModel& model,
                 const StageCostKind& kind);
Vector objective_gradient(const HorizonWindow& window, std::span<const Vector> candidate,
                          const NonlinearModel& model, const StageCostKind& kind);
Matrix objective_hessian(const HorizonWindow& window, std::span<const Vector> candidate, const NonlinearModel& model,
                         const StageCostKind& kind);

// ---------------------------------------------------------------------------
// Estimation

struct StepDiagnostics {
  int t = 0;
  int horizon = 0;
  int iterations = 0;
  double objective = 0.0;
  double gradient_norm = 0.0;
  double wall_ms = 0.0;
  SolveStatus status = SolveStatus::Converged;
  bool cold_restart = false;
  std::vector<double> objective_history;
};

struct MheStepResult {
  Vector estimate;                  // x̂_{t|t}
  std::vector<Vector> trajectory;   // x̂_{s|t} .. x̂_{t|t}
  StepDiagnostics diagnostics;
};

/// Raised when the window solve does not converge, even after a cold restart.
class EstimateFailed : public Error {
 public:
  EstimateFailed(const std::string& what, std::vector<Vector> best, StepDiagnostics diagnostics)
      : Error(what), best_(std::move(best)), diagnostics_(std::move(diagnostics)) {}
  const std::vector<Vector>& best_iterate() const { return best_; }
  const StepDiagnostics& diagnostics() const { return diagnostics_; }

 private:
  std::vector<Vector> best_;
  StepDiagnostics diagnostics_;
};

/// Cold-start guess: the anchor mean replicated across the window.
std::vector<Vector> cold_start(const HorizonWindow& window);

/// Minimizes the window objective. `initial_guess`, when given, must hold
/// horizon + 1 states; otherwise the cold start is used.
MheStepResult mhe_step(const HorizonWindow& window, const NonlinearModel& model, const MheConfig& config,
                       std::optional<std::vector<Vector>> initial_guess = std::nullopt);

/// Solves a window to stationarity with the exact Hessian as curvature; used
/// where a tight minimizer is needed (influence analysis).
std::vector<Vector> solve_window_precise(const WindowObjective& objective, std::vector<Vector> guess,
                                         SolverConfig config = {});

struct EstimateTrace {
  std::vector<int> t;
  std::vector<Vector> estimates;                 // x̂_{t|t}, t = 1..N
  std::vector<std::vector<Vector>> trajectories; // smoothed window per step
  std::vector<Matrix> arrival_covariances;       // P_t used as later anchors, t = 0..N
  std::vector<StepDiagnostics> diagnostics;
};

/// Runs the moving-horizon estimator over y_1..y_N. Windows shorter than the
/// horizon are used while t < T. `controls` holds u_0..u_{N−1} or is empty.
/// `prior` defaults to the model's initial density.
EstimateTrace run_estimator(const NonlinearModel& model, std::span<const Vector> measurements,
                            std::span<const Vector> controls, const MheConfig& config,
                            std::optional<GaussianDensity> prior = std::nullopt);

}  // namespace rmhe
