#include "rmhe/models.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

namespace rmhe {

namespace {

void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ModelValidationError(what + " has shape " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                               ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

void require_psd(const Matrix& m, const std::string& what) {
  if (!is_psd(m)) throw ModelValidationError(what + " is not symmetric positive semi-definite");
}

void require_pd(const Matrix& m, const std::string& what) {
  require_psd(m, what);
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m), Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= 0.0) throw ModelValidationError(what + " is not positive definite");
}

Vector sample_with_root(Rng& rng, const Vector& mean, const Matrix& root) {
  return mean + root * rng.normal(static_cast<int>(root.cols()));
}

}  // namespace

void GaussianDensity::validate(const std::string& what) const {
  require_shape(covariance, mean.size(), mean.size(), what + " covariance");
  if (!mean.allFinite()) throw ModelValidationError(what + " mean is not finite");
  require_psd(covariance, what + " covariance");
}

void LinearGaussianModel::validate(bool require_pd_noise) const {
  const auto n = A.rows();
  const auto m = C.rows();
  require_shape(A, n, n, "A");
  require_shape(C, m, n, "C");
  require_shape(Q, n, n, "Q");
  require_shape(R, m, m, "R");
  if (require_pd_noise) {
    require_pd(Q, "Q");
    require_pd(R, "R");
  } else {
    require_psd(Q, "Q");
    require_psd(R, "R");
  }
  initial.validate("initial");
  if (initial.dim() != n) throw ModelValidationError("initial density has the wrong dimension");
}

Matrix NonlinearModel::transition_jac(const Vector& x, const Vector& u) const {
  if (transition_jacobian) return transition_jacobian(x, u);
  return finite_difference_jacobian([&](const Vector& p) { return transition_mean(p, u); }, x);
}

Matrix NonlinearModel::measurement_jac(const Vector& x) const {
  if (measurement_jacobian) return measurement_jacobian(x);
  return finite_difference_jacobian(measurement_mean, x);
}

Matrix NonlinearModel::transition_curv(const Vector& x, const Vector& u, const Vector& w) const {
  if (transition_curvature) return transition_curvature(x, u, w);
  // Differentiate the contracted gradient J(x)ᵀw.
  Matrix h = finite_difference_jacobian([&](const Vector& p) -> Vector { return transition_jac(p, u).transpose() * w; },
                                        x);
  return symmetrized(h);
}

Matrix NonlinearModel::measurement_curv(const Vector& x, const Vector& w) const {
  if (measurement_curvature) return measurement_curvature(x, w);
  Matrix h = finite_difference_jacobian([&](const Vector& p) -> Vector { return measurement_jac(p).transpose() * w; },
                                        x);
  return symmetrized(h);
}

void NonlinearModel::validate() const {
  if (n <= 0 || m <= 0) throw ModelValidationError(name + ": dimensions must be positive");
  if (!transition_mean || !measurement_mean) throw ModelValidationError(name + ": mean maps are required");
  require_shape(Q, n, n, name + " Q");
  require_shape(R, m, m, name + " R");
  require_psd(Q, name + " Q");
  require_pd(R, name + " R");
  initial.validate(name + " initial");
  if (initial.dim() != n) throw ModelValidationError(name + ": initial density has the wrong dimension");
}

NonlinearModel as_nonlinear(const LinearGaussianModel& model) {
  NonlinearModel out;
  out.name = "linear";
  out.n = model.state_dim();
  out.m = model.measurement_dim();
  out.Q = model.Q;
  out.R = model.R;
  out.initial = model.initial;
  const Matrix A = model.A;
  const Matrix C = model.C;
  out.transition_mean = [A](const Vector& x, const Vector&) -> Vector { return A * x; };
  out.measurement_mean = [C](const Vector& x) -> Vector { return C * x; };
  out.transition_jacobian = [A](const Vector&, const Vector&) { return A; };
  out.measurement_jacobian = [C](const Vector&) { return C; };
  const int n = out.n;
  out.transition_curvature = [n](const Vector&, const Vector&, const Vector&) -> Matrix {
    return Matrix::Zero(n, n);
  };
  out.measurement_curvature = [n](const Vector&, const Vector&) -> Matrix { return Matrix::Zero(n, n); };
  out.linear = model;
  return out;
}

Matrix finite_difference_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x) {
  const Vector f0 = f(x);
  Matrix jac(f0.size(), x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + h;
    const Vector fp = f(probe);
    probe[i] = x[i] - h;
    const Vector fm = f(probe);
    probe[i] = x[i];
    jac.col(i) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

// ---------------------------------------------------------------------------

void ContaminationSpec::validate(int measurement_dim) const {
  if (!(p_c >= 0.0 && p_c <= 1.0)) throw ModelValidationError("contamination probability must lie in [0, 1]");
  if (p_c == 0.0) return;
  if (const auto* g = std::get_if<GaussianOutlier>(&outlier)) {
    if (g->mean.size() != measurement_dim) throw ModelValidationError("Gaussian outlier mean has the wrong dimension");
    require_shape(g->covariance, measurement_dim, measurement_dim, "Gaussian outlier covariance");
    require_psd(g->covariance, "Gaussian outlier covariance");
  } else if (const auto* t = std::get_if<StudentTOutlier>(&outlier)) {
    if (!(t->nu >= 1.0)) throw ModelValidationError("Student-t degrees of freedom must be >= 1");
    if (!(t->scale > 0.0) || !std::isfinite(t->scale)) throw ModelValidationError("Student-t scale must be positive");
  } else if (const auto* s = std::get_if<SaturationOutlier>(&outlier)) {
    if (!std::isfinite(s->value)) throw ModelValidationError("saturation value must be finite");
    for (int c : s->channels) {
      if (c < 0 || c >= measurement_dim) throw ModelValidationError("saturation channel out of range");
    }
  }
}

// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

double Rng::normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

Vector Rng::normal(int n) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = normal();
  return v;
}

Vector Rng::gaussian(const Vector& mean, const Matrix& cov) { return sample_with_root(*this, mean, psd_sqrt(cov)); }

double Rng::student_t(double nu) { return std::student_t_distribution<double>(nu)(engine_); }

bool Rng::bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }

// ---------------------------------------------------------------------------

Trajectory simulate_trajectory(const NonlinearModel& model, const ContaminationSpec& contamination, int n_steps,
                               std::uint64_t seed, std::span<const Vector> controls) {
  if (n_steps < 1) throw ModelValidationError("n_steps must be >= 1");
  model.initial.validate(model.name + " initial");
  require_psd(model.Q, model.name + " Q");
  require_psd(model.R, model.name + " R");
  contamination.validate(model.m);
  if (!controls.empty() && static_cast<int>(controls.size()) < n_steps) {
    throw ModelValidationError("control sequence shorter than n_steps");
  }

  const Matrix q_root = psd_sqrt(model.Q);
  const Matrix r_root = psd_sqrt(model.R);
  const Matrix init_root = psd_sqrt(model.initial.covariance);
  const Vector zero_m = Vector::Zero(model.m);

  Rng rng(seed);
  Trajectory traj;
  traj.seed = seed;
  traj.states.reserve(n_steps + 1);
  traj.measurements.reserve(n_steps);
  traj.outlier_flags.reserve(n_steps);

  Vector x = sample_with_root(rng, model.initial.mean, init_root);
  if (model.initial_support) x = model.initial_support(x);
  traj.states.push_back(x);

  const Vector no_control;
  for (int t = 1; t <= n_steps; ++t) {
    const Vector& u = controls.empty() ? no_control : controls[t - 1];
    if (!controls.empty()) traj.controls.push_back(u);
    x = model.transition_mean(x, u) + q_root * rng.normal(model.n);
    if (!x.allFinite()) throw SimulationDiverged(t, "state is not finite");
    traj.states.push_back(x);

    const bool outlier = rng.bernoulli(contamination.p_c);
    Vector y = model.measurement_mean(x);
    if (!outlier) {
      y += r_root * rng.normal(model.m);
    } else if (const auto* g = std::get_if<GaussianOutlier>(&contamination.outlier)) {
      y += g->mean + psd_sqrt(g->covariance) * rng.normal(model.m);
    } else if (const auto* st = std::get_if<StudentTOutlier>(&contamination.outlier)) {
      for (int i = 0; i < model.m; ++i) y[i] += st->scale * rng.student_t(st->nu);
    } else if (const auto* s = std::get_if<SaturationOutlier>(&contamination.outlier)) {
      y += r_root * rng.normal(model.m);
      for (int c : s->channels) y[c] = s->value;
    }
    if (!y.allFinite()) throw SimulationDiverged(t, "measurement is not finite");
    traj.measurements.push_back(std::move(y));
    traj.outlier_flags.push_back(outlier);
  }
  return traj;
}

Trajectory simulate_trajectory(const LinearGaussianModel& model, const ContaminationSpec& contamination,
                               int n_steps, std::uint64_t seed) {
  model.validate(/*require_pd=*/false);
  return simulate_trajectory(as_nonlinear(model), contamination, n_steps, seed);
}

// ---------------------------------------------------------------------------

LinearGaussianModel wiener_velocity_model(double dt) {
  LinearGaussianModel model;
  model.A = Matrix::Identity(4, 4);
  model.A(0, 2) = dt;
  model.A(1, 3) = dt;
  model.C = Matrix::Zero(2, 4);
  model.C(0, 0) = 1.0;
  model.C(1, 1) = 1.0;
  const double q11 = dt * dt * dt / 3.0;
  const double q12 = dt * dt / 2.0;
  model.Q = Matrix::Zero(4, 4);
  model.Q(0, 0) = model.Q(1, 1) = q11;
  model.Q(0, 2) = model.Q(2, 0) = q12;
  model.Q(1, 3) = model.Q(3, 1) = q12;
  model.Q(2, 2) = model.Q(3, 3) = dt;
  model.R = Matrix::Identity(2, 2);
  model.initial = {Vector::Zero(4), Matrix::Identity(4, 4)};
  return model;
}

NonlinearModel gas_reactor_model() {
  constexpr double k1 = 0.16;
  constexpr double k2 = 0.0064;
  constexpr double dt = 0.1;

  NonlinearModel model;
  model.name = "reactor";
  model.n = 2;
  model.m = 1;
  model.Q = 1e-4 * Matrix::Identity(2, 2);
  model.R = Matrix::Constant(1, 1, 0.01);
  model.initial = {Vector::Zero(2), Matrix::Identity(2, 2)};

  model.transition_mean = [](const Vector& x, const Vector&) -> Vector {
    const double a = x[0];
    const double b = x[1];
    Vector next(2);
    next << a + (-2.0 * k1 * a * a + 2.0 * k2 * b) * dt, b + (k1 * a * a - k2 * b) * dt;
    return next;
  };
  model.measurement_mean = [](const Vector& x) -> Vector { return Vector::Constant(1, x[0] + x[1]); };
  model.transition_jacobian = [](const Vector& x, const Vector&) -> Matrix {
    Matrix j(2, 2);
    j << 1.0 - 4.0 * k1 * x[0] * dt, 2.0 * k2 * dt, 2.0 * k1 * x[0] * dt, 1.0 - k2 * dt;
    return j;
  };
  model.measurement_jacobian = [](const Vector&) -> Matrix { return Matrix::Ones(1, 2); };
  model.transition_curvature = [](const Vector&, const Vector&, const Vector& w) -> Matrix {
    Matrix h = Matrix::Zero(2, 2);
    h(0, 0) = (-4.0 * w[0] + 2.0 * w[1]) * k1 * dt;
    return h;
  };
  model.measurement_curvature = [](const Vector&, const Vector&) -> Matrix { return Matrix::Zero(2, 2); };
  // Partial pressures start nonnegative.
  model.initial_support = [](const Vector& x) -> Vector { return x.cwiseAbs(); };
  return model;
}

// ---------------------------------------------------------------------------

VehicleParams default_vehicle_params() {
  VehicleParams p;
  p.cones = {{1.05, -2.69}, {4.07, -1.75}, {6.02, -3.32}};
  p.process_mean = (Vector(3) << -0.00017, -0.00020, -0.00056).finished();
  p.process_cov = Vector((Vector(3) << 0.0034, 0.0056, 0.0041).finished()).asDiagonal();
  p.measurement_mean = (Vector(6) << -0.0312, -0.0581, -0.0557, 0.0053, 0.0059, 0.0125).finished();
  p.measurement_cov =
      Vector((Vector(6) << 0.0238, 0.0284, 0.0259, 0.0107, 0.0094, 0.0118).finished()).asDiagonal();
  p.initial = {Vector::Zero(3), 0.01 * Matrix::Identity(3, 3)};
  return p;
}

namespace {

Vector json_vector(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

VehicleFixture load_vehicle_fixture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open vehicle fixture");
  nlohmann::json doc;
  try {
    in >> doc;
    VehicleFixture fx;
    fx.schema_version = doc.at("schema_version").get<int>();
    if (fx.schema_version != 1) throw ConfigError("unsupported vehicle fixture schema_version");
    auto& p = fx.params;
    p.dt = doc.at("dt").get<double>();
    p.lidar_offset = doc.at("lidar_offset").get<double>();
    for (const auto& c : doc.at("cones")) p.cones.emplace_back(c.at(0).get<double>(), c.at(1).get<double>());
    const auto& noise = doc.at("noise");
    p.process_mean = json_vector(noise.at("process_mean"));
    p.process_cov = json_vector(noise.at("process_var")).asDiagonal();
    p.measurement_mean = json_vector(noise.at("measurement_mean"));
    p.measurement_cov = json_vector(noise.at("measurement_var")).asDiagonal();
    const auto& init = doc.at("initial");
    p.initial.mean = json_vector(init.at("mean"));
    p.initial.covariance = json_vector(init.at("var")).asDiagonal();
    const auto& ctrl = doc.at("controls");
    const auto v = ctrl.at("v").get<std::vector<double>>();
    const auto w = ctrl.at("omega").get<std::vector<double>>();
    if (v.size() != w.size()) throw ConfigError("control profiles v and omega differ in length");
    for (std::size_t i = 0; i < v.size(); ++i) fx.controls.push_back((Vector(2) << v[i], w[i]).finished());
    return fx;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path, std::string("malformed vehicle fixture: ") + e.what());
  }
}

Vector vehicle_range_bearing(const Vector& pose, std::span<const Eigen::Vector2d> cones, double lidar_offset) {
  const auto k = static_cast<Eigen::Index>(cones.size());
  Vector out(2 * k);
  const double c = std::cos(pose[2]);
  const double s = std::sin(pose[2]);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double dx = cones[i].x() - pose[0] - lidar_offset * c;
    const double dy = cones[i].y() - pose[1] - lidar_offset * s;
    const double d = std::hypot(dx, dy);
    if (d < 1e-12) throw DegenerateGeometry("Lidar mount coincides with cone " + std::to_string(i + 1));
    out[i] = d;
    out[k + i] = std::remainder(std::atan2(dy, dx) - pose[2], 2.0 * std::numbers::pi);
  }
  return out;
}

NonlinearModel warehouse_vehicle_model(const VehicleParams& params) {
  NonlinearModel model;
  model.name = "vehicle";
  model.n = 3;
  model.m = 2 * static_cast<int>(params.cones.size());
  model.Q = params.process_cov;
  model.R = params.measurement_cov;
  model.initial = params.initial;

  const double dt = params.dt;
  const double l = params.lidar_offset;
  const Vector mu_x = params.process_mean;
  const Vector mu_y = params.measurement_mean;
  const auto cones = params.cones;
  auto require_control = [](const Vector& u) {
    if (u.size() != 2) throw DimensionError("vehicle transition needs a (v, omega) control");
  };

  model.transition_mean = [dt, mu_x, require_control](const Vector& x, const Vector& u) -> Vector {
    require_control(u);
    Vector next = x + mu_x;
    next[0] += u[0] * std::cos(x[2]) * dt;
    next[1] += u[0] * std::sin(x[2]) * dt;
    next[2] += u[1] * dt;
    return next;
  };
  model.transition_jacobian = [dt, require_control](const Vector& x, const Vector& u) -> Matrix {
    require_control(u);
    Matrix j = Matrix::Identity(3, 3);
    j(0, 2) = -u[0] * std::sin(x[2]) * dt;
    j(1, 2) = u[0] * std::cos(x[2]) * dt;
    return j;
  };
  model.transition_curvature = [dt, require_control](const Vector& x, const Vector& u, const Vector& w) -> Matrix {
    require_control(u);
    Matrix h = Matrix::Zero(3, 3);
    h(2, 2) = -u[0] * dt * (w[0] * std::cos(x[2]) + w[1] * std::sin(x[2]));
    return h;
  };
  model.measurement_mean = [cones, l, mu_y](const Vector& x) -> Vector {
    return vehicle_range_bearing(x, cones, l) + mu_y;
  };
  model.measurement_jacobian = [cones, l](const Vector& x) -> Matrix {
    const auto k = static_cast<Eigen::Index>(cones.size());
    Matrix j(2 * k, 3);
    const double c = std::cos(x[2]);
    const double s = std::sin(x[2]);
    for (Eigen::Index i = 0; i < k; ++i) {
      const double dx = cones[i].x() - x[0] - l * c;
      const double dy = cones[i].y() - x[1] - l * s;
      const double d2 = dx * dx + dy * dy;
      const double d = std::sqrt(d2);
      if (d < 1e-12) throw DegenerateGeometry("Lidar mount coincides with cone " + std::to_string(i + 1));
      j(i, 0) = -dx / d;
      j(i, 1) = -dy / d;
      j(i, 2) = l * (dx * s - dy * c) / d;
      j(k + i, 0) = dy / d2;
      j(k + i, 1) = -dx / d2;
      j(k + i, 2) = -l * (dy * s + dx * c) / d2 - 1.0;
    }
    return j;
  };
  return model;
}

}  // namespace rmhe
