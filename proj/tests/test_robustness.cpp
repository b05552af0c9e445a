#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rmhe/robustness.hpp"
#include "test_support.hpp"

using namespace rmhe;

namespace {

struct Solved {
  HorizonWindow window;
  std::vector<Vector> solution;
};

Solved solved_window(const NonlinearModel& model, const StageCostKind& kind, int horizon, std::uint64_t seed) {
  const Trajectory traj = simulate_trajectory(model, ContaminationSpec::none(), 30, seed);
  Solved s;
  s.window.t = 10 + horizon;
  s.window.anchor_mean = traj.states[10];
  s.window.anchor_cov = 0.5 * Matrix::Identity(model.n, model.n);
  for (int k = 10; k < 10 + horizon; ++k) s.window.measurements.push_back(traj.measurements[k]);
  const WindowObjective obj(s.window, model, kind);
  s.solution = solve_window_precise(obj, cold_start(s.window), precise_solver_config());
  return s;
}

NonlinearModel random_walk_1d() {
  LinearGaussianModel m;
  m.A = Matrix::Identity(1, 1);
  m.C = Matrix::Identity(1, 1);
  m.Q = Matrix::Constant(1, 1, 0.1);
  m.R = Matrix::Constant(1, 1, 0.5);
  m.initial = {Vector::Zero(1), Matrix::Identity(1, 1)};
  return as_nonlinear(m);
}

double rel(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(b.norm(), 1e-12); }

}  // namespace

TEST_SUITE("robustness") {
  TEST_CASE("contamination equal to the data has zero influence") {
    const NonlinearModel model = as_nonlinear(wiener_velocity_model());
    for (StageCostKind kind : {StageCostKind{StandardCost{}}, StageCostKind{BetaCost{0.1}}}) {
      const Solved s = solved_window(model, kind, 3, 4);
      const InfluenceResult r =
          influence_function_per_step(s.window, s.solution, model, kind, s.window.measurements);
      CHECK(r.M2.isZero(0.0));
      CHECK(r.influence.isZero(0.0));
    }
  }

  TEST_CASE("standard M2 is the weighted difference of data and contamination") {
    const LinearGaussianModel lin = wiener_velocity_model();
    const NonlinearModel model = as_nonlinear(lin);
    const Solved s = solved_window(model, StandardCost{}, 3, 5);
    const Vector z = vec({4.0, -7.0});
    const InfluenceResult r = influence_function(s.window, s.solution, model, StandardCost{}, z);
    CHECK(r.M2.head(4).isZero(0.0));
    const Matrix Rinv = lin.R.inverse();
    for (int i = 1; i <= 3; ++i) {
      const Vector& x = s.solution[i];
      const Vector& y = s.window.measurements[i - 1];
      const Vector expected = lin.C.transpose() * Rinv * (y - lin.C * x) - lin.C.transpose() * Rinv * (z - lin.C * x);
      CHECK((r.M2.segment(4 * i, 4) - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK(relative_error(r.influence, -r.M1.inverse() * r.M2) < 1e-10);
  }

  TEST_CASE("empirical influence converges toward the analytic one as epsilon shrinks") {
    const NonlinearModel model = gas_reactor_model();
    const StageCostKind kind = BetaCost{0.1};
    const Solved s = solved_window(model, kind, 3, 6);
    const Vector z = s.window.measurements[0] + vec({0.3});
    const Vector analytic = influence_function(s.window, s.solution, model, kind, z).influence;
    std::vector<Vector> e;
    for (double eps : {1e-3, 1e-4, 1e-5}) e.push_back(empirical_influence(s.window, model, kind, z, eps, s.solution));
    CHECK((e[2] - e[1]).norm() < (e[1] - e[0]).norm());
    CHECK(rel(e[2], analytic) < 1e-4);
    CHECK(rel(e[2], analytic) < rel(e[0], analytic));
  }

  TEST_CASE("empirical influence with z equal to the data vanishes") {
    const NonlinearModel model = random_walk_1d();
    const Solved s = solved_window(model, StandardCost{}, 1, 7);
    const Vector e = empirical_influence(s.window, model, StandardCost{}, s.window.measurements[0], 1e-4, s.solution);
    CHECK(e.norm() < 1e-6);
  }

  TEST_CASE("standard empirical influence is affine in z") {
    const NonlinearModel model = random_walk_1d();
    const Solved s = solved_window(model, StandardCost{}, 2, 8);
    const Vector z1 = vec({1.0});
    const Vector z2 = vec({3.0});
    const Vector z3 = vec({7.0});
    const Vector e1 = empirical_influence(s.window, model, StandardCost{}, z1, 1e-5, s.solution);
    const Vector e2 = empirical_influence(s.window, model, StandardCost{}, z2, 1e-5, s.solution);
    const Vector e3 = empirical_influence(s.window, model, StandardCost{}, z3, 1e-5, s.solution);
    // z3 − z1 = 3 (z2 − z1).
    CHECK(rel(e3 - e1, 3.0 * (e2 - e1)) < 1e-5);
  }

  TEST_CASE("analytic M1 matches the finite-difference Hessian") {
    const NonlinearModel reactor = gas_reactor_model();
    const NonlinearModel wiener = as_nonlinear(wiener_velocity_model());
    for (const auto* model : {&reactor, &wiener}) {
      for (StageCostKind kind : {StageCostKind{StandardCost{}}, StageCostKind{BetaCost{0.1}}}) {
        const Solved s = solved_window(*model, kind, 3, 9);
        const Vector z = s.window.measurements[0] * 1.5;
        const auto a = influence_function(s.window, s.solution, *model, kind, z, HessianMode::Analytic);
        const auto f = influence_function(s.window, s.solution, *model, kind, z, HessianMode::FiniteDifference);
        CHECK((a.M1 - f.M1).norm() / a.M1.norm() < 1e-4);
        CHECK((a.M1 - a.M1.transpose()).cwiseAbs().maxCoeff() == 0.0);
      }
    }
  }

  TEST_CASE("non-stationary solution is a precondition error") {
    const NonlinearModel model = gas_reactor_model();
    const Solved s = solved_window(model, StandardCost{}, 3, 10);
    std::vector<Vector> off = s.solution;
    off[1] += vec({0.5, -0.5});
    CHECK_THROWS_AS(influence_function(s.window, off, model, StandardCost{}, vec({1.0})), PreconditionError);
    CHECK_THROWS_AS(gross_error_sensitivity(s.window, s.solution, model, BetaCost{0.1}, {}), PreconditionError);
  }

  TEST_CASE("a flat direction in the window objective violates the Hessian assumption") {
    // With a vanishing arrival weight, moving x_1 along unmeasured velocity and
    // x_0 = A⁻¹x_1 changes neither the process nor the measurement terms.
    const LinearGaussianModel lin = wiener_velocity_model();
    const NonlinearModel model = as_nonlinear(lin);
    const Vector x0 = vec({0.5, -0.2, 1.0, 0.3});
    const Vector x1 = lin.A * x0;
    HorizonWindow w;
    w.anchor_mean = x0;
    w.anchor_cov = 1e14 * Matrix::Identity(4, 4);
    w.measurements = {lin.C * x1};
    w.t = 1;
    const std::vector<Vector> solution = {x0, x1};
    CHECK_THROWS_AS(influence_function(w, solution, model, StandardCost{}, vec({1.0, 1.0})), AssumptionViolated);
  }

  TEST_CASE("closed-form rho_max matches a numeric supremum") {
    const NonlinearModel wiener = as_nonlinear(wiener_velocity_model());
    const NonlinearModel reactor = gas_reactor_model();
    for (const auto* model : {&wiener, &reactor}) {
      for (double beta : {1e-3, 0.1, 0.5}) {
        const Solved s = solved_window(*model, BetaCost{beta}, 3, 11);
        const double closed = rho_max(s.solution, *model, beta);
        double best = 0.0;
        for (const auto& x : s.solution) {
          const Vector center = model->measurement_mean(x);
          for (int a = 0; a < (model->m == 1 ? 2 : 360); ++a) {
            const double angle = 2.0 * std::numbers::pi * a / (model->m == 1 ? 2 : 360);
            const Vector dir = model->m == 1 ? vec({std::cos(angle)}) : vec({std::cos(angle), std::sin(angle)});
            for (int k = 0; k <= 4000; ++k) {
              const double t = std::pow(10.0, -3.0 + 6.0 * k / 4000.0);
              best = std::max(best, rho(x, center + t * dir, *model, beta));
            }
          }
        }
        CHECK(best <= closed * (1.0 + 1e-12));
        CHECK(best >= closed * (1.0 - 1e-4));
      }
    }
  }

  TEST_CASE("sensitivity reports for both stage costs") {
    const NonlinearModel model = as_nonlinear(wiener_velocity_model());
    const Solved b = solved_window(model, BetaCost{0.1}, 3, 12);
    const Vector center = model.measurement_mean(b.solution.back());
    const auto grid = geometric_z_grid(center, vec({1.0, 1.0}), 1.0, 1e6, 61);
    REQUIRE(grid.size() == 61);
    CHECK((grid.front() - center).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((grid.back() - center).norm() == doctest::Approx(1e6).epsilon(1e-12));

    const SensitivityReport rb = gross_error_sensitivity(b.window, b.solution, model, BetaCost{0.1}, grid);
    CHECK(rb.verdict == "bounded");
    CHECK(std::isfinite(rb.bound));
    CHECK(rb.empirical_sup <= rb.bound + 1e-6);
    CHECK(rb.influence_norms.size() == 61);
    CHECK(rb.horizon == 3);

    const Solved s = solved_window(model, StandardCost{}, 3, 12);
    const SensitivityReport rs = gross_error_sensitivity(s.window, s.solution, model, StandardCost{}, grid);
    CHECK(rs.verdict == "unbounded");
    CHECK(std::isinf(rs.bound));
    CHECK(std::abs(rs.growth_ratio - 2.0) < 0.2);
    const std::string json = to_json(rs);
    CHECK(json.find("\"bound\": null") != std::string::npos);
    CHECK(json.find("\"unbounded\"") != std::string::npos);
  }
}
