#include "rmhe/mhe.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

namespace rmhe {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2π)

struct BetaFromKind {
  double operator()(const StandardCost&) const { return 0.0; }
  double operator()(const BetaCost& b) const { return b.beta; }
};

double log_normalizer(const Matrix& R) {
  // log((2π)^m |R|)
  return static_cast<double>(R.rows()) * kLog2Pi + log_det(spd_factor<double>(R, "measurement noise covariance"));
}

}  // namespace

std::string to_string(const StageCostKind& kind) {
  if (std::holds_alternative<StandardCost>(kind)) return "standard";
  return "beta";
}

void validate(const StageCostKind& kind) {
  if (const auto* b = std::get_if<BetaCost>(&kind)) {
    if (!(b->beta > 0.0 && b->beta < 1.0)) throw DomainError("beta must lie in (0, 1)");
  }
}

double gaussian_power_integral(const Matrix& R, double beta) {
  const double m = static_cast<double>(R.rows());
  return std::pow(beta + 1.0, -0.5 * m) * std::exp(-0.5 * beta * log_normalizer(R));
}

double beta_loss(const Vector& y, const Vector& x, const NonlinearModel& model, double beta) {
  const StageCostKind kind = BetaCost{beta};
  validate(kind);
  return MeasurementCost(kind, model.R).value(y - model.measurement_mean(x));
}

double stage_cost_h(const Vector& y, const Vector& x, const NonlinearModel& model, const StageCostKind& kind) {
  return MeasurementCost(kind, model.R).value(y - model.measurement_mean(x));
}

// ---------------------------------------------------------------------------

MeasurementCost::MeasurementCost(const StageCostKind& kind, const Matrix& R) {
  validate(kind);
  info_ = spd_inverse<double>(R, "measurement noise covariance");
  const double log_norm = log_normalizer(R);
  if (const auto* b = std::get_if<BetaCost>(&kind)) {
    beta_kind_ = true;
    beta_ = b->beta;
    const double norm_beta = std::exp(-0.5 * beta_ * log_norm);
    scale_ = (beta_ + 1.0) * norm_beta;
    minimum_ = gaussian_power_integral(R, beta_) - scale_ / beta_;
  } else {
    minimum_ = 0.5 * log_norm;
  }
}

double MeasurementCost::excess(const Vector& r) const {
  const double s = weighted_norm_sq(r, info_);
  if (!beta_kind_) return 0.5 * s;
  return -(scale_ / beta_) * std::expm1(-0.5 * beta_ * s);
}

double MeasurementCost::weight(const Vector& r) const {
  if (!beta_kind_) return 1.0;
  return scale_ * std::exp(-0.5 * beta_ * weighted_norm_sq(r, info_));
}

Matrix MeasurementCost::residual_hessian(const Vector& r) const {
  if (!beta_kind_) return info_;
  const Vector wr = info_ * r;
  return weight(r) * (info_ - beta_ * wr * wr.transpose());
}

Matrix MeasurementCost::residual_hessian_psd(const Vector& r) const {
  if (!beta_kind_) return info_;
  const Vector wr = info_ * r;
  const Matrix middle = info_ - beta_ * wr * wr.transpose();
  if (middle.rows() == 1) return weight(r) * middle.cwiseMax(0.0);
  return weight(r) * psd_projection(middle);
}

// ---------------------------------------------------------------------------

std::string to_string(ArrivalFilter filter) {
  switch (filter) {
    case ArrivalFilter::KF:
      return "kf";
    case ArrivalFilter::EKF:
      return "ekf";
    case ArrivalFilter::UKF:
      return "ukf";
  }
  return "unknown";
}

void MheConfig::validate() const {
  if (horizon < 1) throw DomainError("MHE horizon must be >= 1");
  rmhe::validate(stage_cost);
  solver.validate();
}

// ---------------------------------------------------------------------------

WindowObjective::WindowObjective(const HorizonWindow& window, const NonlinearModel& model, const StageCostKind& kind,
                                 std::optional<WindowContamination> contamination)
    : model_(&model),
      window_(window),
      meas_(kind, model.R),
      contamination_(std::move(contamination)),
      n_(model.n),
      horizon_(window.horizon()) {
  if (window.anchor_mean.size() != n_) throw DimensionError("anchor mean has the wrong dimension");
  if (window.anchor_cov.rows() != n_ || window.anchor_cov.cols() != n_) {
    throw DimensionError("anchor covariance has the wrong dimension");
  }
  for (const auto& y : window.measurements) {
    if (y.size() != model.m) throw DimensionError("window measurement has the wrong dimension");
  }
  if (!window.controls.empty() && static_cast<int>(window.controls.size()) != horizon_) {
    throw DimensionError("window controls must match the horizon");
  }
  if (contamination_) {
    if (static_cast<int>(contamination_->z.size()) != horizon_) {
      throw DimensionError("contamination needs one point per window step");
    }
    for (const auto& z : contamination_->z) {
      if (z.size() != model.m) throw DimensionError("contamination point has the wrong dimension");
    }
  }
  anchor_info_ = spd_inverse<double>(window.anchor_cov, "anchor covariance");
  const auto q_llt = spd_factor<double>(model.Q, "process noise covariance");
  process_info_ = q_llt.solve(Matrix::Identity(n_, n_));
  const double process_const = 0.5 * (n_ * kLog2Pi + log_det(q_llt));
  constant_ = horizon_ * (process_const + meas_.minimum());
}

Vector WindowObjective::control(int step) const {
  if (window_.controls.empty()) return Vector();
  return window_.controls[step - 1];
}

double WindowObjective::excess(const Vector& x) const {
  const Vector d = block(x, 0) - window_.anchor_mean;
  double total = 0.5 * weighted_norm_sq(d, anchor_info_);
  for (int i = 1; i <= horizon_; ++i) {
    const Vector xi = block(x, i);
    const Vector e = xi - model_->transition_mean(block(x, i - 1), control(i));
    total += 0.5 * weighted_norm_sq(e, process_info_);
    const Vector g = model_->measurement_mean(xi);
    if (contamination_) {
      const double eps = contamination_->epsilon;
      total += (1.0 - eps) * meas_.excess(window_.measurements[i - 1] - g) +
               eps * meas_.excess(contamination_->z[i - 1] - g);
    } else {
      total += meas_.excess(window_.measurements[i - 1] - g);
    }
  }
  return total;
}

Vector WindowObjective::measurement_gradient(const Vector& x, int step, const Vector& z) const {
  const Vector xi = block(x, step);
  const Vector r = z - model_->measurement_mean(xi);
  return -meas_.weight(r) * (model_->measurement_jac(xi).transpose() * (meas_.information() * r));
}

Vector WindowObjective::gradient(const Vector& x) const {
  Vector g = Vector::Zero(size());
  g.segment(0, n_) = anchor_info_ * (block(x, 0) - window_.anchor_mean);
  for (int i = 1; i <= horizon_; ++i) {
    const Vector prev = block(x, i - 1);
    const Vector e = block(x, i) - model_->transition_mean(prev, control(i));
    const Vector v = process_info_ * e;
    g.segment(static_cast<Eigen::Index>(i) * n_, n_) += v;
    g.segment(static_cast<Eigen::Index>(i - 1) * n_, n_) -= model_->transition_jac(prev, control(i)).transpose() * v;
    if (contamination_) {
      const double eps = contamination_->epsilon;
      g.segment(static_cast<Eigen::Index>(i) * n_, n_) +=
          (1.0 - eps) * measurement_gradient(x, i, window_.measurements[i - 1]) +
          eps * measurement_gradient(x, i, contamination_->z[i - 1]);
    } else {
      g.segment(static_cast<Eigen::Index>(i) * n_, n_) += measurement_gradient(x, i, window_.measurements[i - 1]);
    }
  }
  return g;
}

Matrix WindowObjective::gauss_newton(const Vector& x) const {
  Matrix h = Matrix::Zero(size(), size());
  h.block(0, 0, n_, n_) = anchor_info_;
  for (int i = 1; i <= horizon_; ++i) {
    const auto a = static_cast<Eigen::Index>(i - 1) * n_;
    const auto b = static_cast<Eigen::Index>(i) * n_;
    const Matrix F = model_->transition_jac(block(x, i - 1), control(i));
    const Matrix qf = process_info_ * F;
    h.block(a, a, n_, n_) += F.transpose() * qf;
    h.block(a, b, n_, n_) -= qf.transpose();
    h.block(b, a, n_, n_) -= qf;
    h.block(b, b, n_, n_) += process_info_;

    const Vector xi = block(x, i);
    const Vector g = model_->measurement_mean(xi);
    const Matrix H = model_->measurement_jac(xi);
    auto add = [&](const Vector& target, double w) {
      h.block(b, b, n_, n_) += w * H.transpose() * meas_.residual_hessian_psd(target - g) * H;
    };
    if (contamination_) {
      add(window_.measurements[i - 1], 1.0 - contamination_->epsilon);
      add(contamination_->z[i - 1], contamination_->epsilon);
    } else {
      add(window_.measurements[i - 1], 1.0);
    }
  }
  return h;
}

Matrix WindowObjective::hessian(const Vector& x) const {
  Matrix h = Matrix::Zero(size(), size());
  h.block(0, 0, n_, n_) = anchor_info_;
  for (int i = 1; i <= horizon_; ++i) {
    const auto a = static_cast<Eigen::Index>(i - 1) * n_;
    const auto b = static_cast<Eigen::Index>(i) * n_;
    const Vector prev = block(x, i - 1);
    const Vector u = control(i);
    const Matrix F = model_->transition_jac(prev, u);
    const Matrix qf = process_info_ * F;
    const Vector v = process_info_ * (block(x, i) - model_->transition_mean(prev, u));
    h.block(a, a, n_, n_) += F.transpose() * qf - model_->transition_curv(prev, u, v);
    h.block(a, b, n_, n_) -= qf.transpose();
    h.block(b, a, n_, n_) -= qf;
    h.block(b, b, n_, n_) += process_info_;

    const Vector xi = block(x, i);
    const Vector g = model_->measurement_mean(xi);
    const Matrix H = model_->measurement_jac(xi);
    auto add = [&](const Vector& target, double w) {
      const Vector r = target - g;
      const Vector wr = meas_.information() * r;
      h.block(b, b, n_, n_) += w * (H.transpose() * meas_.residual_hessian(r) * H -
                                    meas_.weight(r) * model_->measurement_curv(xi, wr));
    };
    if (contamination_) {
      add(window_.measurements[i - 1], 1.0 - contamination_->epsilon);
      add(contamination_->z[i - 1], contamination_->epsilon);
    } else {
      add(window_.measurements[i - 1], 1.0);
    }
  }
  return symmetrized(h);
}

Vector WindowObjective::stack(std::span<const Vector> states) const {
  if (static_cast<int>(states.size()) != horizon_ + 1) {
    throw DimensionError("candidate trajectory must hold horizon + 1 states");
  }
  Vector out(size());
  for (int i = 0; i <= horizon_; ++i) {
    if (states[i].size() != n_) throw DimensionError("candidate state has the wrong dimension");
    out.segment(static_cast<Eigen::Index>(i) * n_, n_) = states[i];
  }
  return out;
}

std::vector<Vector> WindowObjective::unstack(const Vector& stacked) const {
  std::vector<Vector> out;
  out.reserve(horizon_ + 1);
  for (int i = 0; i <= horizon_; ++i) out.emplace_back(block(stacked, i));
  return out;
}

double objective(const HorizonWindow& window, std::span<const Vector> candidate, const NonlinearModel& model,
                 const StageCostKind& kind) {
  const WindowObjective obj(window, model, kind);
  return obj.value(obj.stack(candidate));
}

Vector objective_gradient(const HorizonWindow& window, std::span<const Vector> candidate,
                          const NonlinearModel& model, const StageCostKind& kind) {
  const WindowObjective obj(window, model, kind);
  return obj.gradient(obj.stack(candidate));
}

Matrix objective_hessian(const HorizonWindow& window, std::span<const Vector> candidate, const NonlinearModel& model,
                         const StageCostKind& kind) {
  const WindowObjective obj(window, model, kind);
  return obj.hessian(obj.stack(candidate));
}

// ---------------------------------------------------------------------------

std::vector<Vector> cold_start(const HorizonWindow& window) {
  return std::vector<Vector>(static_cast<std::size_t>(window.horizon()) + 1, window.anchor_mean);
}

namespace {

SolveResult solve(const WindowObjective& obj, const Vector& x0, const SolverConfig& config) {
  return minimize([&](const Vector& x) { return obj.excess(x); }, [&](const Vector& x) { return obj.gradient(x); },
                  [&](const Vector& x) { return obj.hessian(x); }, x0, config);
}

StepDiagnostics diagnostics_of(const WindowObjective& obj, const HorizonWindow& window, const SolveResult& res) {
  StepDiagnostics d;
  d.t = window.t;
  d.horizon = window.horizon();
  d.iterations = res.report.iterations;
  d.objective = obj.constant() + res.report.final_objective;
  d.gradient_norm = res.report.final_gradient_norm;
  d.status = res.report.status;
  d.objective_history = res.report.objective_history;
  for (double& v : d.objective_history) v += obj.constant();
  return d;
}

}  // namespace

MheStepResult mhe_step(const HorizonWindow& window, const NonlinearModel& model, const MheConfig& config,
                       std::optional<std::vector<Vector>> initial_guess) {
  config.validate();
  if (window.horizon() < 1) throw DimensionError("window holds no measurements");
  const auto start = std::chrono::steady_clock::now();
  const WindowObjective obj(window, model, config.stage_cost);

  const bool warm = initial_guess.has_value();
  SolveResult res = solve(obj, obj.stack(warm ? *initial_guess : cold_start(window)), config.solver);
  bool restarted = false;
  if (warm && res.report.status != SolveStatus::Converged) {
    SolveResult cold = solve(obj, obj.stack(cold_start(window)), config.solver);
    restarted = true;
    if (cold.report.status == SolveStatus::Converged || cold.report.final_objective < res.report.final_objective) {
      res = std::move(cold);
    }
  }

  MheStepResult out;
  out.trajectory = obj.unstack(res.x);
  out.estimate = out.trajectory.back();
  out.diagnostics = diagnostics_of(obj, window, res);
  out.diagnostics.cold_restart = restarted;
  out.diagnostics.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  if (res.report.status != SolveStatus::Converged) {
    throw EstimateFailed("window solve at t=" + std::to_string(window.t) + " ended " + to_string(res.report.status),
                         out.trajectory, out.diagnostics);
  }
  return out;
}

std::vector<Vector> solve_window_precise(const WindowObjective& obj, std::vector<Vector> guess, SolverConfig config) {
  const SolveResult res =
      minimize([&](const Vector& x) { return obj.excess(x); }, [&](const Vector& x) { return obj.gradient(x); },
               [&](const Vector& x) { return obj.hessian(x); }, obj.stack(guess), config);
  // Tolerances below the rounding floor end in Stalled; accept those once the
  // gradient is already negligible.
  const bool at_floor = res.report.status == SolveStatus::Stalled &&
                        res.report.final_gradient_norm < 1e-9 * std::max(1.0, std::abs(res.report.final_objective));
  if (res.report.status != SolveStatus::Converged && !at_floor) {
    StepDiagnostics d;
    d.iterations = res.report.iterations;
    d.gradient_norm = res.report.final_gradient_norm;
    d.status = res.report.status;
    throw EstimateFailed("precise window solve ended " + to_string(res.report.status), obj.unstack(res.x), d);
  }
  return obj.unstack(res.x);
}

// ---------------------------------------------------------------------------

EstimateTrace run_estimator(const NonlinearModel& model, std::span<const Vector> measurements,
                            std::span<const Vector> controls, const MheConfig& config,
                            std::optional<GaussianDensity> prior) {
  config.validate();
  if (config.arrival_filter == ArrivalFilter::KF && !model.linear) {
    throw ConfigError("KF arrival covariance requires a linear model");
  }
  const int N = static_cast<int>(measurements.size());
  if (!controls.empty() && static_cast<int>(controls.size()) < N) {
    throw DimensionError("control sequence shorter than the measurement sequence");
  }
  const GaussianDensity p0 = prior ? *prior : model.initial;
  const Vector no_control;
  auto control_at = [&](int k) -> const Vector& { return controls.empty() ? no_control : controls[k]; };

  EstimateTrace trace;
  std::vector<Vector> filtered{p0.mean};  // x̂_{k|k}, k = 0..t
  trace.arrival_covariances.push_back(p0.covariance);
  std::vector<Vector> previous;
  int previous_start = 0;

  for (int t = 1; t <= N; ++t) {
    const auto start = std::chrono::steady_clock::now();
    const int s = std::max(0, t - config.horizon);
    HorizonWindow window;
    window.t = t;
    window.anchor_mean = filtered[s];
    window.anchor_cov = trace.arrival_covariances[s];
    for (int k = s; k < t; ++k) {
      window.measurements.push_back(measurements[k]);
      if (!controls.empty()) window.controls.push_back(controls[k]);
    }

    std::optional<std::vector<Vector>> guess;
    if (config.warm_start) {
      std::vector<Vector> g;
      if (previous.empty()) {
        g.push_back(window.anchor_mean);
      } else {
        g.assign(previous.begin() + (s - previous_start), previous.end());
      }
      g.push_back(model.transition_mean(g.back(), control_at(t - 1)));
      guess = std::move(g);
    }

    MheStepResult step;
    try {
      step = mhe_step(window, model, config, std::move(guess));
    } catch (const EstimateFailed& e) {
      throw EstimateFailed(std::string("estimator failed at step ") + std::to_string(t) + ": " + e.what(),
                           e.best_iterate(), e.diagnostics());
    }

    FilterState last{{filtered[t - 1], trace.arrival_covariances[t - 1]}, t - 1};
    FilterState next;
    switch (config.arrival_filter) {
      case ArrivalFilter::KF:
        next = kf_step(*model.linear, last, measurements[t - 1]);
        break;
      case ArrivalFilter::EKF:
        next = ekf_covariance_step(model, last, measurements[t - 1], control_at(t - 1));
        break;
      case ArrivalFilter::UKF:
        next = ukf_step(model, last, measurements[t - 1], config.ukf, control_at(t - 1));
        break;
    }

    filtered.push_back(step.estimate);
    trace.arrival_covariances.push_back(std::move(next.posterior.covariance));
    step.diagnostics.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    trace.t.push_back(t);
    trace.estimates.push_back(step.estimate);
    trace.diagnostics.push_back(std::move(step.diagnostics));
    previous = step.trajectory;
    previous_start = s;
    trace.trajectories.push_back(std::move(step.trajectory));
  }
  return trace;
}

}  // namespace rmhe
