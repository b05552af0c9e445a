#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rmhe/linalg.hpp"

namespace rmhe {

/// Mean/covariance pair used for priors, arrival costs and filter posteriors.
struct GaussianDensity {
  Vector mean;
  Matrix covariance;

  int dim() const { return static_cast<int>(mean.size()); }
  /// Throws ModelValidationError unless the covariance is symmetric PSD and
  /// matches the mean's dimension.
  void validate(const std::string& what) const;
};

/// x_{t+1} = A x_t + ξ,  y_t = C x_t + ζ,  ξ ~ N(0, Q),  ζ ~ N(0, R).
struct LinearGaussianModel {
  Matrix A;
  Matrix C;
  Matrix Q;
  Matrix R;
  GaussianDensity initial;

  int state_dim() const { return static_cast<int>(A.rows()); }
  int measurement_dim() const { return static_cast<int>(C.rows()); }
  /// Dimension checks plus PSD covariances; with `require_pd` Q and R must
  /// also be strictly positive definite.
  void validate(bool require_pd = true) const;
};

/// Additive-noise state-space model with mean maps and optional analytic
/// derivatives. Missing derivatives fall back to central finite differences.
struct NonlinearModel {
  using TransitionFn = std::function<Vector(const Vector& x, const Vector& u)>;
  using MeasurementFn = std::function<Vector(const Vector& x)>;
  using TransitionJacobianFn = std::function<Matrix(const Vector& x, const Vector& u)>;
  using MeasurementJacobianFn = std::function<Matrix(const Vector& x)>;
  /// Σ_k w_k ∇²F_k(x, u), an n×n matrix.
  using TransitionCurvatureFn = std::function<Matrix(const Vector& x, const Vector& u, const Vector& w)>;
  /// Σ_k w_k ∇²G_k(x), an n×n matrix.
  using MeasurementCurvatureFn = std::function<Matrix(const Vector& x, const Vector& w)>;

  std::string name;
  int n = 0;
  int m = 0;
  TransitionFn transition_mean;
  MeasurementFn measurement_mean;
  Matrix Q;
  Matrix R;
  GaussianDensity initial;

  TransitionJacobianFn transition_jacobian;
  MeasurementJacobianFn measurement_jacobian;
  TransitionCurvatureFn transition_curvature;
  MeasurementCurvatureFn measurement_curvature;

  /// Applied to the sampled true initial state only (never to estimates).
  std::function<Vector(const Vector&)> initial_support;

  /// Present when the model wraps a LinearGaussianModel.
  std::optional<LinearGaussianModel> linear;

  Matrix transition_jac(const Vector& x, const Vector& u) const;
  Matrix measurement_jac(const Vector& x) const;
  Matrix transition_curv(const Vector& x, const Vector& u, const Vector& w) const;
  Matrix measurement_curv(const Vector& x, const Vector& w) const;

  void validate() const;
};

NonlinearModel as_nonlinear(const LinearGaussianModel& model);

/// Central differences with step 1e-6 · max(1, |x_i|).
Matrix finite_difference_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x);

// ---------------------------------------------------------------------------
// Contamination

/// With probability p_c the nominal measurement noise is replaced by a draw
/// from N(mean, covariance).
struct GaussianOutlier {
  Vector mean;
  Matrix covariance;
};

/// With probability p_c the measurement noise is scale · t_ν, drawn
/// independently per channel.
struct StudentTOutlier {
  double nu = 1.0;
  double scale = 1.0;
};

/// With probability p_c the listed channels read exactly `value`.
struct SaturationOutlier {
  double value = 0.0;
  std::vector<int> channels;
};

using OutlierMechanism = std::variant<GaussianOutlier, StudentTOutlier, SaturationOutlier>;

struct ContaminationSpec {
  double p_c = 0.0;
  OutlierMechanism outlier = GaussianOutlier{};

  static ContaminationSpec none() { return {}; }
  void validate(int measurement_dim) const;
};

// ---------------------------------------------------------------------------
// Simulation

struct Trajectory {
  std::vector<Vector> states;        // x_0 .. x_N
  std::vector<Vector> measurements;  // y_1 .. y_N
  std::vector<Vector> controls;      // u_0 .. u_{N-1}, empty when uncontrolled
  std::vector<bool> outlier_flags;   // one per measurement
  std::uint64_t seed = 0;

  int n_steps() const { return static_cast<int>(measurements.size()); }
};

/// Sub-seed of Monte-Carlo trial `trial` under `base_seed`.
constexpr std::uint64_t sub_seed(std::uint64_t base_seed, std::uint64_t trial) { return base_seed ^ trial; }

/// Seeded generator. The seed is expanded with SplitMix64 before it reaches
/// the Mersenne engine so that adjacent seeds give unrelated streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  double normal();
  Vector normal(int n);
  /// Draw from N(mean, cov) with cov PSD.
  Vector gaussian(const Vector& mean, const Matrix& cov);
  double student_t(double nu);
  bool bernoulli(double p);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Samples x_0 from the model's initial density, propagates with process
/// noise and draws contaminated measurements. `controls`, when non-empty,
/// must hold n_steps entries.
Trajectory simulate_trajectory(const NonlinearModel& model, const ContaminationSpec& contamination, int n_steps,
                               std::uint64_t seed, std::span<const Vector> controls = {});
Trajectory simulate_trajectory(const LinearGaussianModel& model, const ContaminationSpec& contamination,
                               int n_steps, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Model zoo

/// Constant-velocity point in the plane, position measured.
LinearGaussianModel wiener_velocity_model(double dt = 0.1);

/// Isothermal gas-phase reactor 2A ⇌ B, Euler discretized, total pressure
/// measured.
NonlinearModel gas_reactor_model();

struct VehicleParams {
  double dt = 0.0667;
  double lidar_offset = 0.329;
  std::vector<Eigen::Vector2d> cones;
  Vector process_mean;
  Matrix process_cov;
  Vector measurement_mean;
  Matrix measurement_cov;
  GaussianDensity initial;
};

VehicleParams default_vehicle_params();

struct VehicleFixture {
  int schema_version = 0;
  VehicleParams params;
  std::vector<Vector> controls;  // (v, ω) per step
};

/// Reads the versioned JSON fixture described in fixtures/README.md.
VehicleFixture load_vehicle_fixture(const std::string& path);

/// Ranges then bearings from the Lidar mount to every cone, bearings wrapped
/// to (-π, π]. Throws DegenerateGeometry when the mount sits on a cone.
Vector vehicle_range_bearing(const Vector& pose, std::span<const Eigen::Vector2d> cones, double lidar_offset);

/// Unicycle with (v, ω) controls observed through ranges/bearings to cones.
/// Identified noise means are folded into the mean maps.
NonlinearModel warehouse_vehicle_model(const VehicleParams& params = default_vehicle_params());

}  // namespace rmhe
