#include "rmhe/robustness.hpp"

#include <cmath>

#include <json.hpp>

namespace rmhe {

namespace {

Matrix fd_hessian(const WindowObjective& obj, const Vector& x) {
  const auto dim = x.size();
  Matrix h(dim, dim);
  Vector probe = x;
  for (Eigen::Index j = 0; j < dim; ++j) {
    const double step = 1e-5 * std::max(1.0, std::abs(x[j]));
    probe[j] = x[j] + step;
    const Vector gp = obj.gradient(probe);
    probe[j] = x[j] - step;
    const Vector gm = obj.gradient(probe);
    probe[j] = x[j];
    h.col(j) = (gp - gm) / (2.0 * step);
  }
  return symmetrized(h);
}

// Eigen-decomposed M1 with the nonsingularity check applied.
struct HessianInverse {
  Eigen::SelfAdjointEigenSolver<Matrix> eig;

  explicit HessianInverse(const Matrix& m1) : eig(m1) {
    if (eig.info() != Eigen::Success) throw AssumptionViolated("eigendecomposition of the window Hessian failed");
    const Vector abs_vals = eig.eigenvalues().cwiseAbs();
    const double largest = abs_vals.maxCoeff();
    if (!(largest > 0.0) || abs_vals.minCoeff() < 1e-12 * largest) {
      throw AssumptionViolated("window Hessian is singular at the solution");
    }
  }

  Vector solve(const Vector& b) const {
    const Matrix& v = eig.eigenvectors();
    return v * (v.transpose() * b).cwiseQuotient(eig.eigenvalues());
  }

  double inverse_frobenius() const { return eig.eigenvalues().cwiseInverse().norm(); }
};

void require_stationary(const WindowObjective& obj, const Vector& x) {
  const double gnorm = obj.gradient(x).norm();
  if (!(gnorm < 1e-6 * std::max(1.0, std::abs(obj.excess(x))))) {
    throw PreconditionError("window solution is not stationary (gradient norm " + std::to_string(gnorm) + ")");
  }
}

Matrix window_hessian(const WindowObjective& obj, const Vector& x, HessianMode mode) {
  return mode == HessianMode::Analytic ? obj.hessian(x) : fd_hessian(obj, x);
}

Vector contamination_vector(const WindowObjective& obj, const HorizonWindow& window, const Vector& x,
                            std::span<const Vector> z) {
  const int n = obj.state_dim();
  Vector m2 = Vector::Zero(obj.size());
  for (int i = 1; i <= obj.horizon(); ++i) {
    m2.segment(static_cast<Eigen::Index>(i) * n, n) =
        obj.measurement_gradient(x, i, z[i - 1]) - obj.measurement_gradient(x, i, window.measurements[i - 1]);
  }
  return m2;
}

}  // namespace

InfluenceResult influence_function_per_step(const HorizonWindow& window, std::span<const Vector> solution,
                                            const NonlinearModel& model, const StageCostKind& kind,
                                            std::span<const Vector> z, HessianMode mode) {
  const WindowObjective obj(window, model, kind);
  if (static_cast<int>(z.size()) != obj.horizon()) throw DimensionError("need one contamination point per step");
  for (const auto& zi : z) {
    if (zi.size() != model.m) throw DimensionError("contamination point has the wrong dimension");
  }
  const Vector x = obj.stack(solution);
  require_stationary(obj, x);

  InfluenceResult out;
  out.M1 = window_hessian(obj, x, mode);
  out.M2 = contamination_vector(obj, window, x, z);
  out.influence = -HessianInverse(out.M1).solve(out.M2);
  out.z.assign(z.begin(), z.end());
  return out;
}

InfluenceResult influence_function(const HorizonWindow& window, std::span<const Vector> solution,
                                   const NonlinearModel& model, const StageCostKind& kind, const Vector& z,
                                   HessianMode mode) {
  const std::vector<Vector> shared(static_cast<std::size_t>(window.horizon()), z);
  return influence_function_per_step(window, solution, model, kind, shared, mode);
}

SolverConfig precise_solver_config() {
  SolverConfig config;
  config.max_iterations = 500;
  config.gradient_tolerance = 1e-13;
  config.step_tolerance = 1e-15;
  return config;
}

Vector empirical_influence(const HorizonWindow& window, const NonlinearModel& model, const StageCostKind& kind,
                           const Vector& z, double epsilon, std::optional<std::vector<Vector>> baseline,
                           const SolverConfig& config) {
  if (!(epsilon > 0.0 && epsilon <= 0.01)) throw DomainError("epsilon must lie in (0, 0.01]");
  if (z.size() != model.m) throw DimensionError("contamination point has the wrong dimension");
  const WindowObjective clean(window, model, kind);
  std::vector<Vector> x0 = baseline ? std::move(*baseline) : solve_window_precise(clean, cold_start(window), config);

  WindowContamination contamination;
  contamination.z.assign(static_cast<std::size_t>(window.horizon()), z);
  contamination.epsilon = epsilon;
  const WindowObjective dirty(window, model, kind, contamination);
  const std::vector<Vector> x_eps = solve_window_precise(dirty, x0, config);
  return (dirty.stack(x_eps) - clean.stack(x0)) / epsilon;
}

double rho(const Vector& x, const Vector& z, const NonlinearModel& model, double beta) {
  const MeasurementCost cost(BetaCost{beta}, model.R);
  const Vector r = z - model.measurement_mean(x);
  return cost.weight(r) * (model.measurement_jac(x).transpose() * (cost.information() * r)).norm();
}

double rho_max(std::span<const Vector> solution, const NonlinearModel& model, double beta) {
  const MeasurementCost cost(BetaCost{beta}, model.R);
  const Matrix w_half = psd_sqrt(cost.information());
  double sigma = 0.0;
  for (const auto& x : solution) {
    const Matrix ht = model.measurement_jac(x).transpose() * w_half;
    sigma = std::max(sigma, Eigen::JacobiSVD<Matrix>(ht).singularValues()(0));
  }
  return cost.weight(Vector::Zero(model.m)) * sigma * std::exp(-0.5) / std::sqrt(beta);
}

std::vector<Vector> geometric_z_grid(const Vector& center, const Vector& direction, double t_min, double t_max,
                                     int count) {
  if (count < 1) throw PreconditionError("z grid needs at least one point");
  if (!(t_min > 0.0 && t_max >= t_min)) throw DomainError("z grid needs 0 < t_min <= t_max");
  const double dnorm = direction.norm();
  if (!(dnorm > 0.0)) throw DomainError("z grid direction must be non-zero");
  std::vector<Vector> grid;
  grid.reserve(count);
  for (int k = 0; k < count; ++k) {
    const double frac = count == 1 ? 0.0 : static_cast<double>(k) / (count - 1);
    const double t = t_min * std::pow(t_max / t_min, frac);
    grid.emplace_back(center + (t / dnorm) * direction);
  }
  return grid;
}

SensitivityReport gross_error_sensitivity(const HorizonWindow& window, std::span<const Vector> solution,
                                          const NonlinearModel& model, const StageCostKind& kind,
                                          std::span<const Vector> z_grid, HessianMode mode) {
  if (z_grid.empty()) throw PreconditionError("z grid is empty");
  const WindowObjective obj(window, model, kind);
  const Vector x = obj.stack(solution);
  require_stationary(obj, x);
  const Matrix m1 = window_hessian(obj, x, mode);
  const HessianInverse inv(m1);

  auto if_norm = [&](const Vector& z) {
    if (z.size() != model.m) throw DimensionError("contamination point has the wrong dimension");
    const std::vector<Vector> zs(static_cast<std::size_t>(obj.horizon()), z);
    return inv.solve(contamination_vector(obj, window, x, zs)).norm();
  };

  SensitivityReport report;
  report.kind = to_string(kind);
  report.horizon = obj.horizon();
  report.grid.assign(z_grid.begin(), z_grid.end());
  for (const auto& z : z_grid) {
    report.influence_norms.push_back(if_norm(z));
    report.empirical_sup = std::max(report.empirical_sup, report.influence_norms.back());
  }
  const double half = if_norm(z_grid.back() / 2.0);
  report.growth_ratio = half > 0.0 ? report.influence_norms.back() / half : std::numeric_limits<double>::infinity();

  if (const auto* b = std::get_if<BetaCost>(&kind)) {
    report.beta = b->beta;
    report.rho_max = rho_max(solution, model, b->beta);
    report.bound = 2.0 * std::sqrt(static_cast<double>(obj.horizon())) * inv.inverse_frobenius() * report.rho_max;
    report.verdict = "bounded";
  } else {
    report.verdict = "unbounded";
  }
  return report;
}

std::string to_json(const SensitivityReport& report, int indent) {
  using nlohmann::json;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json grid = json::array();
  for (const auto& z : report.grid) grid.push_back(std::vector<double>(z.data(), z.data() + z.size()));
  json norms = json::array();
  for (double v : report.influence_norms) norms.push_back(num(v));
  json doc = {{"kind", report.kind},
              {"beta", num(report.beta)},
              {"horizon", report.horizon},
              {"verdict", report.verdict},
              {"bound", num(report.bound)},
              {"rho_max", num(report.rho_max)},
              {"empirical_sup", num(report.empirical_sup)},
              {"growth_ratio", num(report.growth_ratio)},
              {"grid", grid},
              {"influence_norms", norms}};
  return doc.dump(indent);
}

}  // namespace rmhe
