#include "rmhe/filters.hpp"

namespace rmhe {

namespace {

void require_dims(const GaussianDensity& d, int n, const Vector& y, int m, const char* who) {
  if (d.dim() != n || d.covariance.rows() != n || d.covariance.cols() != n) {
    throw DimensionError(std::string(who) + ": state dimension mismatch");
  }
  if (y.size() != m) throw DimensionError(std::string(who) + ": measurement dimension mismatch");
}

// Linear(ized) measurement update with the Joseph-form covariance.
GaussianDensity linear_update(const Vector& mean, const Matrix& cov, const Matrix& H, const Matrix& R,
                              const Vector& innovation) {
  const Matrix s = H * cov * H.transpose() + R;
  const auto llt = spd_factor<double>(s, "innovation covariance");
  const Matrix gain = llt.solve(H * cov).transpose();
  const Matrix ikh = Matrix::Identity(cov.rows(), cov.cols()) - gain * H;
  GaussianDensity out;
  out.mean = mean + gain * innovation;
  out.covariance = symmetrized(ikh * cov * ikh.transpose() + gain * R * gain.transpose());
  return out;
}

Matrix sigma_points(const Vector& mean, const Matrix& cov, double gamma) {
  const auto llt = spd_factor<double>(cov, "UKF covariance square root");
  const Matrix l = llt.matrixL();
  const auto n = mean.size();
  Matrix pts(n, 2 * n + 1);
  pts.col(0) = mean;
  for (Eigen::Index i = 0; i < n; ++i) {
    pts.col(1 + i) = mean + gamma * l.col(i);
    pts.col(1 + n + i) = mean - gamma * l.col(i);
  }
  return pts;
}

}  // namespace

UkfWeights ukf_weights(int n, const UkfParams& params) {
  const double lambda = params.lambda(n);
  if (!(n + lambda > 0.0)) throw DomainError("UKF scaling requires n + lambda > 0");
  UkfWeights w;
  w.mean = Vector::Constant(2 * n + 1, 0.5 / (n + lambda));
  w.covariance = w.mean;
  w.mean[0] = 1.0 - 2.0 * n * w.mean[1];
  w.covariance[0] = w.mean[0] + 1.0 - params.alpha * params.alpha + params.beta_ut;
  w.gamma = std::sqrt(n + lambda);
  return w;
}

FilterState kf_step(const LinearGaussianModel& model, const FilterState& prior, const Vector& y) {
  require_dims(prior.posterior, model.state_dim(), y, model.measurement_dim(), "kf_step");
  const Vector mean = model.A * prior.posterior.mean;
  const Matrix cov = symmetrized(model.A * prior.posterior.covariance * model.A.transpose() + model.Q);
  return {linear_update(mean, cov, model.C, model.R, y - model.C * mean), prior.step + 1};
}

FilterState ekf_covariance_step(const NonlinearModel& model, const FilterState& state, const Vector& y,
                                const Vector& u) {
  require_dims(state.posterior, model.n, y, model.m, "ekf_covariance_step");
  const Matrix F = model.transition_jac(state.posterior.mean, u);
  const Vector mean = model.transition_mean(state.posterior.mean, u);
  const Matrix cov = symmetrized(F * state.posterior.covariance * F.transpose() + model.Q);
  const Matrix H = model.measurement_jac(mean);
  return {linear_update(mean, cov, H, model.R, y - model.measurement_mean(mean)), state.step + 1};
}

FilterState ukf_step(const NonlinearModel& model, const FilterState& state, const Vector& y,
                     const UkfParams& params, const Vector& u) {
  require_dims(state.posterior, model.n, y, model.m, "ukf_step");
  const int n = model.n;
  const UkfWeights w = ukf_weights(n, params);
  const int count = 2 * n + 1;

  Matrix pts = sigma_points(state.posterior.mean, state.posterior.covariance, w.gamma);
  Matrix prop(n, count);
  for (int i = 0; i < count; ++i) prop.col(i) = model.transition_mean(pts.col(i), u);
  const Vector mean = prop * w.mean;
  Matrix cov = model.Q;
  for (int i = 0; i < count; ++i) {
    const Vector d = prop.col(i) - mean;
    cov += w.covariance[i] * d * d.transpose();
  }
  cov = symmetrized(cov);

  pts = sigma_points(mean, cov, w.gamma);
  Matrix meas(model.m, count);
  for (int i = 0; i < count; ++i) meas.col(i) = model.measurement_mean(pts.col(i));
  const Vector y_hat = meas * w.mean;
  Matrix s = model.R;
  Matrix cross = Matrix::Zero(n, model.m);
  for (int i = 0; i < count; ++i) {
    const Vector dz = meas.col(i) - y_hat;
    s += w.covariance[i] * dz * dz.transpose();
    cross += w.covariance[i] * (pts.col(i) - mean) * dz.transpose();
  }
  const auto llt = spd_factor<double>(s, "UKF innovation covariance");
  const Matrix gain = llt.solve(cross.transpose()).transpose();

  FilterState out;
  out.step = state.step + 1;
  out.posterior.mean = mean + gain * (y - y_hat);
  out.posterior.covariance = symmetrized(cov - gain * s * gain.transpose());
  return out;
}

}  // namespace rmhe
