#pragma once

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmhe/mhe.hpp"

namespace rmhe {

enum class HessianMode { Analytic, FiniteDifference };

/// Influence of a point contamination z on the stacked window minimizer.
/// M2 stacks ∇_{x_i}h(z_i, x_i) − ∇_{x_i}h(y_i, x_i) over the window with a
/// zero arrival block, and influence = −M1⁻¹ M2.
struct InfluenceResult {
  Vector influence;
  Matrix M1;
  Vector M2;
  std::vector<Vector> z;  // one per window step
};

/// Analytic influence function at a solved window with the same z at every
/// step. The solution must be stationary (‖∇J‖ < 1e-6 · max(1, |J − J_min|)).
InfluenceResult influence_function(const HorizonWindow& window, std::span<const Vector> solution,
                                   const NonlinearModel& model, const StageCostKind& kind, const Vector& z,
                                   HessianMode mode = HessianMode::Analytic);

/// Per-step contamination points z_1..z_T.
InfluenceResult influence_function_per_step(const HorizonWindow& window, std::span<const Vector> solution,
                                            const NonlinearModel& model, const StageCostKind& kind,
                                            std::span<const Vector> z, HessianMode mode = HessianMode::Analytic);

/// Tight solver settings used by the empirical oracle.
SolverConfig precise_solver_config();

/// (x̂^{z,ε} − x̂)/ε over the stacked window, where x̂^{z,ε} minimizes the
/// objective with every stage cost h(y_i,·) replaced by
/// (1−ε)h(y_i,·) + ε h(z,·). `baseline` skips the uncontaminated solve.
Vector empirical_influence(const HorizonWindow& window, const NonlinearModel& model, const StageCostKind& kind,
                           const Vector& z, double epsilon,
                           std::optional<std::vector<Vector>> baseline = std::nullopt,
                           const SolverConfig& config = precise_solver_config());

/// sup_z ‖∇ₓh(z, x̂_i)‖ over the window states for the β-loss:
///   κ · max_i σ_max(H_iᵀ R^{-1/2}) · e^{-1/2} / √β,
/// with κ = (β+1)/√((2π)^{βm}|R|^β) and H_i the measurement Jacobian.
double rho_max(std::span<const Vector> solution, const NonlinearModel& model, double beta);

/// ‖∇ₓh(z, x)‖ for the β-loss; the quantity whose supremum is rho_max.
double rho(const Vector& x, const Vector& z, const NonlinearModel& model, double beta);

/// Points center + t·direction/‖direction‖ with t geometric in [t_min, t_max].
std::vector<Vector> geometric_z_grid(const Vector& center, const Vector& direction, double t_min, double t_max,
                                     int count);

struct SensitivityReport {
  std::string kind;
  double beta = 0.0;
  int horizon = 0;
  std::string verdict;  // "bounded" or "unbounded"
  double bound = std::numeric_limits<double>::infinity();
  double rho_max = std::numeric_limits<double>::infinity();
  double empirical_sup = 0.0;
  std::vector<Vector> grid;
  std::vector<double> influence_norms;
  /// ‖IF(z_max)‖ / ‖IF(z_max / 2)‖ with z_max the last grid point.
  double growth_ratio = 0.0;
};

/// Scans ‖IF(z)‖ over `z_grid`. For the β-loss the bound is
/// 2√T · ‖M1⁻¹‖_F · rho_max; for the standard cost the bound is infinite.
SensitivityReport gross_error_sensitivity(const HorizonWindow& window, std::span<const Vector> solution,
                                          const NonlinearModel& model, const StageCostKind& kind,
                                          std::span<const Vector> z_grid,
                                          HessianMode mode = HessianMode::Analytic);

std::string to_json(const SensitivityReport& report, int indent = 2);

}  // namespace rmhe
