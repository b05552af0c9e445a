#pragma once

#include <stdexcept>
#include <string>

namespace rmhe {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Covariance or dimension invariants of a model do not hold.
class ModelValidationError : public Error {
 public:
  using Error::Error;
};

/// A simulated state became non-finite.
class SimulationDiverged : public Error {
 public:
  SimulationDiverged(int step, const std::string& what)
      : Error("simulation diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// A matrix that must be positive definite could not be factorized.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

/// A scalar parameter is outside its admissible range.
class DomainError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Bearing to a landmark is undefined because sensor and landmark coincide.
class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

/// Inputs handed to the minimizer are unusable (non-finite at the start point).
class SolverInputError : public Error {
 public:
  using Error::Error;
};

/// The Hessian of the window objective is singular at the solution.
class AssumptionViolated : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Experiment or CLI configuration failed validation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what) : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace rmhe
