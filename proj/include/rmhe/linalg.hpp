#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "rmhe/errors.hpp"

namespace rmhe {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

/// Diagonal jitter added before the single Cholesky retry.
inline constexpr double kCholeskyJitter = 1e-9;

template <typename Derived>
MatrixX<typename Derived::Scalar> symmetrized(const Eigen::MatrixBase<Derived>& m) {
  return (m + m.transpose()) * typename Derived::Scalar(0.5);
}

/// Symmetric positive-definite factorization with one jittered retry.
/// Throws ConditioningError naming `what` when both attempts fail.
template <typename Scalar>
Eigen::LLT<MatrixX<Scalar>> spd_factor(const MatrixX<Scalar>& m, const std::string& what) {
  if (m.rows() != m.cols()) throw DimensionError(what + " is not square");
  if (!m.allFinite()) throw ConditioningError(what + " has non-finite entries");
  MatrixX<Scalar> s = symmetrized(m);
  Eigen::LLT<MatrixX<Scalar>> llt(s);
  if (llt.info() == Eigen::Success) return llt;
  s.diagonal().array() += Scalar(kCholeskyJitter);
  llt.compute(s);
  if (llt.info() != Eigen::Success) throw ConditioningError(what + " is not positive definite");
  return llt;
}

template <typename Scalar>
Scalar log_det(const Eigen::LLT<MatrixX<Scalar>>& llt) {
  return Scalar(2) * llt.matrixLLT().diagonal().array().log().sum();
}

template <typename Scalar>
MatrixX<Scalar> spd_inverse(const MatrixX<Scalar>& m, const std::string& what) {
  return spd_factor(m, what).solve(MatrixX<Scalar>::Identity(m.rows(), m.cols()));
}

/// ‖v‖²_W for a weight matrix W.
template <typename DerivedV, typename DerivedW>
typename DerivedV::Scalar weighted_norm_sq(const Eigen::MatrixBase<DerivedV>& v,
                                           const Eigen::MatrixBase<DerivedW>& w) {
  return v.dot(w * v);
}

/// True when m is symmetric within `sym_tol` and its symmetric part has
/// eigenvalues ≥ -eig_tol.
bool is_psd(const Matrix& m, double eig_tol = 1e-10, double sym_tol = 1e-9);

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped to 0).
Matrix psd_sqrt(const Matrix& m);

/// Projects a symmetric matrix onto the PSD cone.
Matrix psd_projection(const Matrix& m);

}  // namespace rmhe
