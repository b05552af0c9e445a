#pragma once

#include "rmhe/linalg.hpp"
#include "rmhe/models.hpp"

namespace rmhe {

struct FilterState {
  GaussianDensity posterior;
  int step = 0;
};

/// Sigma-point scaling. Defaults are the usual Gaussian-optimal choices.
struct UkfParams {
  double alpha = 1e-3;
  double beta_ut = 2.0;
  double kappa = 0.0;

  double lambda(int n) const { return alpha * alpha * (n + kappa) - n; }
};

struct UkfWeights {
  Vector mean;
  Vector covariance;
  double gamma = 0.0;  // sigma-point spread √(n + λ)
};

UkfWeights ukf_weights(int n, const UkfParams& params);

/// One Kalman predict/update. The innovation covariance is factorized, never
/// inverted.
FilterState kf_step(const LinearGaussianModel& model, const FilterState& prior, const Vector& y);

/// Q + APAᵀ − APCᵀ(R + CPCᵀ)⁻¹CPAᵀ, symmetrized.
template <typename Scalar>
MatrixX<Scalar> riccati_step(const MatrixX<Scalar>& A, const MatrixX<Scalar>& C, const MatrixX<Scalar>& Q,
                             const MatrixX<Scalar>& R, const MatrixX<Scalar>& P) {
  const MatrixX<Scalar> apc = A * P * C.transpose();
  const MatrixX<Scalar> s = R + C * P * C.transpose();
  const auto llt = spd_factor<Scalar>(s, "Riccati innovation covariance");
  const MatrixX<Scalar> next = Q + A * P * A.transpose() - apc * llt.solve(apc.transpose());
  return symmetrized(next);
}

inline Matrix riccati_step(const LinearGaussianModel& model, const Matrix& P) {
  return riccati_step<double>(model.A, model.C, model.Q, model.R, P);
}

/// Extended Kalman filter step linearized at the current mean.
FilterState ekf_covariance_step(const NonlinearModel& model, const FilterState& state, const Vector& y,
                                const Vector& u = Vector());

/// Unscented Kalman filter step with 2n+1 sigma points and additive noise.
FilterState ukf_step(const NonlinearModel& model, const FilterState& state, const Vector& y,
                     const UkfParams& params = {}, const Vector& u = Vector());

}  // namespace rmhe
