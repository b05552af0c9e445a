// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance                 run every criterion
//   acceptance --criterion N   run one (N = 1..8, or "vehicle")

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "rmhe/bench.hpp"
#include "rmhe/filters.hpp"
#include "rmhe/robustness.hpp"

using namespace rmhe;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

ExperimentConfig pinned(const std::string& name) {
  return ExperimentConfig::load(std::string(RMHE_SOURCE_DIR) + "/configs/" + name + ".json");
}

double mean_rmse(const std::vector<SummaryRow>& rows, const std::string& name) {
  for (const auto& r : rows) {
    if (r.estimator == name) return r.n_failed == 0 ? r.mean : std::numeric_limits<double>::quiet_NaN();
  }
  throw std::runtime_error("no summary row for " + name);
}

double mean_ms(const std::vector<SummaryRow>& rows, const std::string& name) {
  for (const auto& r : rows) {
    if (r.estimator == name) return r.mean_step_ms;
  }
  throw std::runtime_error("no summary row for " + name);
}

// Independent central-difference gradient with its own step rule.
Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    Vector a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const LinearGaussianModel lin = wiener_velocity_model();
  const NonlinearModel model = as_nonlinear(lin);
  MheConfig cfg;
  cfg.horizon = 1;
  cfg.arrival_filter = ArrivalFilter::KF;
  double worst = 0.0;
  for (int seed = 0; seed < 10; ++seed) {
    const Trajectory traj = simulate_trajectory(lin, ContaminationSpec::none(), 200, 100 + seed);
    const EstimateTrace trace = run_estimator(model, traj.measurements, {}, cfg);
    FilterState kf{lin.initial, 0};
    for (int t = 0; t < 200; ++t) {
      kf = kf_step(lin, kf, traj.measurements[t]);
      worst = std::max(worst, (trace.estimates[t] - kf.posterior.mean).cwiseAbs().maxCoeff());
    }
  }
  return {worst < 1e-6, "max |MHE(T=1) - KF| = " + fmt(worst)};
}

Outcome criterion2() {
  const ExperimentConfig config = pinned("fig2");
  const auto rows = summarize(sweep_beta(config));
  const double kf = mean_rmse(rows, "KF");
  const double mhe = mean_rmse(rows, "MHE");
  std::vector<double> curve;
  for (double b : config.beta_grid) curve.push_back(mean_rmse(rows, beta_label("beta-MHE", b)));
  const double at_1e4 = mean_rmse(rows, beta_label("beta-MHE", 1e-4));
  const bool ordering = at_1e4 < mhe && at_1e4 < kf;
  const auto argmin = std::min_element(curve.begin(), curve.end()) - curve.begin();
  bool u_shape = config.beta_grid[argmin] == 1e-4;
  for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
    const bool descending = static_cast<long>(i) < argmin;
    if (descending ? !(curve[i + 1] < curve[i]) : !(curve[i + 1] > curve[i])) u_shape = false;
  }
  std::string detail = "KF " + fmt(kf) + ", MHE " + fmt(mhe) + ", beta curve [";
  for (std::size_t i = 0; i < curve.size(); ++i) detail += (i ? ", " : "") + fmt(curve[i]);
  detail += "], argmin beta = " + fmt(config.beta_grid[argmin]);
  detail += std::string("; ordering ") + (ordering ? "ok" : "violated") + ", U-shape at 1e-4 " +
            (u_shape ? "ok" : "not observed");
  return {ordering && u_shape, detail};
}

Outcome criterion3() {
  const ExperimentConfig config = pinned("fig4");
  bool pass = true;
  std::string detail;
  for (const auto& point : sweep_pc(config)) {
    const auto rows = summarize(point.results);
    const double ukf = mean_rmse(rows, "UKF");
    const double mhe = mean_rmse(rows, "MHE");
    const double beta = mean_rmse(rows, "beta-MHE");
    const bool ok = point.p_c > 0.0 ? (beta <= mhe && beta <= ukf) : std::abs(beta - mhe) <= 0.1 * mhe;
    pass = pass && ok;
    detail += "p_c=" + fmt(point.p_c) + ": UKF " + fmt(ukf) + " MHE " + fmt(mhe) + " beta " + fmt(beta) +
              (ok ? "" : " (violated)") + "; ";
  }
  return {pass, detail};
}

Outcome criterion4() {
  bool pass = true;
  std::string detail;
  for (const std::string fig : {"fig3", "fig5"}) {
    const auto rows = summarize(run_experiment(pinned(fig)));
    const double ratio = mean_ms(rows, "beta-MHE") / mean_ms(rows, "MHE");
    pass = pass && ratio <= 2.0;
    detail += (fig == "fig3" ? "Wiener" : "reactor") + std::string(" ms/step MHE ") + fmt(mean_ms(rows, "MHE")) +
              " beta " + fmt(mean_ms(rows, "beta-MHE")) + " ratio " + fmt(ratio) + "; ";
  }
  return {pass, detail};
}

// Random window from a seeded trajectory: anchor perturbed around the true
// state, contamination point a few noise levels off the first measurement.
struct RandomWindow {
  HorizonWindow window;
  Vector z;
};

RandomWindow random_window(const NonlinearModel& model, const Matrix& anchor_cov, int horizon, std::uint64_t seed,
                           std::span<const Vector> controls = {}) {
  Rng rng(seed);
  const Trajectory traj = simulate_trajectory(model, ContaminationSpec::none(), 40, seed, controls);
  const int s = 10 + static_cast<int>(rng.engine()() % 20);
  RandomWindow w;
  w.window.t = s + horizon;
  w.window.anchor_cov = anchor_cov;
  w.window.anchor_mean = rng.gaussian(traj.states[s], anchor_cov);
  for (int k = s; k < s + horizon; ++k) {
    w.window.measurements.push_back(traj.measurements[k]);
    if (!controls.empty()) w.window.controls.push_back(controls[k]);
  }
  const Vector sd = model.R.diagonal().cwiseSqrt();
  w.z = w.window.measurements.front() + 3.0 * sd.cwiseProduct(rng.normal(model.m));
  return w;
}

Outcome criterion5() {
  struct Case {
    std::string label;
    NonlinearModel model;
    Matrix anchor_cov;
    StageCostKind kind;
  };
  const NonlinearModel wiener = as_nonlinear(wiener_velocity_model());
  const NonlinearModel reactor = gas_reactor_model();
  const std::vector<Case> cases = {
      {"wiener/standard", wiener, Matrix::Identity(4, 4), StandardCost{}},
      {"wiener/beta=1e-4", wiener, Matrix::Identity(4, 4), BetaCost{1e-4}},
      {"wiener/beta=0.1", wiener, Matrix::Identity(4, 4), BetaCost{0.1}},
      {"reactor/standard", reactor, 0.01 * Matrix::Identity(2, 2), StandardCost{}},
      {"reactor/beta=1e-4", reactor, 0.01 * Matrix::Identity(2, 2), BetaCost{1e-4}},
      {"reactor/beta=0.1", reactor, 0.01 * Matrix::Identity(2, 2), BetaCost{0.1}},
  };
  bool pass = true;
  std::string detail;
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
      const RandomWindow rw = random_window(c.model, c.anchor_cov, 3, 5000 + k);
      const WindowObjective obj(rw.window, c.model, c.kind);
      const auto sol = solve_window_precise(obj, cold_start(rw.window), precise_solver_config());
      const Vector analytic = influence_function(rw.window, sol, c.model, c.kind, rw.z).influence;
      const Vector empirical = empirical_influence(rw.window, c.model, c.kind, rw.z, 1e-6, sol);
      worst = std::max(worst, (analytic - empirical).norm() / analytic.norm());
    }
    pass = pass && worst < 1e-4;
    detail += c.label + " max rel err " + fmt(worst) + "; ";
  }
  return {pass, detail};
}

Outcome criterion6() {
  const LinearGaussianModel lin = wiener_velocity_model();
  const NonlinearModel model = as_nonlinear(lin);
  // Noise-free window: the minimizer fits every measurement exactly.
  HorizonWindow window;
  window.t = 3;
  window.anchor_mean = (Vector(4) << 0.3, -0.2, 1.0, 0.5).finished();
  window.anchor_cov = Matrix::Identity(4, 4);
  Vector x = window.anchor_mean;
  for (int t = 0; t < 3; ++t) {
    x = lin.A * x;
    window.measurements.push_back(lin.C * x);
  }
  const auto grid = geometric_z_grid(Vector::Zero(2), (Vector(2) << 1.0, 0.0).finished(), 1.0, 1e6, 61);

  bool pass = true;
  std::string detail;
  for (double beta : {1e-4, 0.1}) {
    const StageCostKind kind = BetaCost{beta};
    const auto sol = solve_window_precise(WindowObjective(window, model, kind), cold_start(window),
                                          precise_solver_config());
    const SensitivityReport r = gross_error_sensitivity(window, sol, model, kind, grid);
    const auto peak_it = std::max_element(r.influence_norms.begin(), r.influence_norms.end());
    const double peak = *peak_it;
    const bool interior = peak_it != r.influence_norms.begin() && peak_it != r.influence_norms.end() - 1;
    const bool decays = r.influence_norms.back() < 1e-3 * peak;
    const bool bounded = r.empirical_sup <= r.bound + 1e-6;
    pass = pass && interior && decays && bounded;
    detail += "beta=" + fmt(beta) + ": peak " + fmt(peak) + " at |z|=" +
              fmt(r.grid[peak_it - r.influence_norms.begin()].norm()) + ", end " + fmt(r.influence_norms.back()) +
              ", bound " + fmt(r.bound) + "; ";
  }
  const StageCostKind standard = StandardCost{};
  const auto sol = solve_window_precise(WindowObjective(window, model, standard), cold_start(window),
                                        precise_solver_config());
  const SensitivityReport r = gross_error_sensitivity(window, sol, model, standard, grid);
  const bool doubling = std::abs(r.growth_ratio - 2.0) <= 0.2;
  bool monotone = true;
  for (std::size_t i = 1; i < r.influence_norms.size(); ++i) {
    if (r.grid[i].norm() > 10.0 && !(r.influence_norms[i] > r.influence_norms[i - 1])) monotone = false;
  }
  pass = pass && doubling && monotone && r.verdict == "unbounded";
  detail += "standard: growth ratio " + fmt(r.growth_ratio) + (monotone ? ", monotone" : ", not monotone");
  return {pass, detail};
}

Outcome criterion7() {
  const LinearGaussianModel lin = wiener_velocity_model();
  const NonlinearModel model = as_nonlinear(lin);
  const Trajectory traj = simulate_trajectory(lin, ContaminationSpec::none(), 200, 77);
  MheConfig cfg;
  cfg.horizon = 3;
  cfg.arrival_filter = ArrivalFilter::KF;
  const EstimateTrace reference = run_estimator(model, traj.measurements, {}, cfg);
  std::vector<double> gaps;
  std::string detail;
  for (double beta : {1e-4, 1e-6, 1e-8}) {
    cfg.stage_cost = BetaCost{beta};
    const EstimateTrace trace = run_estimator(model, traj.measurements, {}, cfg);
    double total = 0.0;
    for (std::size_t t = 0; t < trace.estimates.size(); ++t) {
      total += (trace.estimates[t] - reference.estimates[t]).squaredNorm();
    }
    gaps.push_back(std::sqrt(total / (4.0 * trace.estimates.size())));
    detail += "beta=" + fmt(beta) + ": " + fmt(gaps.back()) + "; ";
  }
  const bool pass = gaps[1] < gaps[0] && gaps[2] < gaps[1] && gaps[2] < 1e-4;
  return {pass, detail};
}

Outcome criterion8() {
  std::string detail;
  bool pass = true;

  // Riccati fixed point p² − p − 1 = 0.
  Matrix one = Matrix::Identity(1, 1);
  Matrix p = one;
  for (int i = 0; i < 200; ++i) p = riccati_step<double>(one, one, one, one, p);
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  const double riccati_err = std::abs(p(0, 0) - golden);
  pass = pass && riccati_err < 1e-9;
  detail += "riccati " + fmt(riccati_err) + "; ";

  // Gradients against central differences.
  double grad_err = 0.0;
  std::vector<std::pair<NonlinearModel, Matrix>> models = {
      {as_nonlinear(wiener_velocity_model()), Matrix::Identity(4, 4)},
      {gas_reactor_model(), 0.01 * Matrix::Identity(2, 2)},
      {warehouse_vehicle_model(), 0.01 * Matrix::Identity(3, 3)}};
  const std::vector<Vector> vehicle_controls(40, (Vector(2) << 0.4, 0.1).finished());
  for (auto& [model, cov] : models) {
    for (const StageCostKind kind : {StageCostKind{StandardCost{}}, StageCostKind{BetaCost{0.1}}}) {
      for (int k = 0; k < 10; ++k) {
        const RandomWindow rw = random_window(model, cov, 3, 900 + k,
                                              model.name == "vehicle" ? std::span<const Vector>(vehicle_controls)
                                                                      : std::span<const Vector>());
        const WindowObjective obj(rw.window, model, kind);
        Rng rng(k);
        Vector x = obj.stack(cold_start(rw.window));
        x += 0.1 * rng.normal(static_cast<int>(x.size()));
        const Vector fd = fd_gradient([&](const Vector& v) { return obj.value(v); }, x);
        grad_err = std::max(grad_err, (obj.gradient(x) - fd).cwiseAbs().maxCoeff());
      }
    }
  }
  pass = pass && grad_err < 1e-5;
  detail += "gradient " + fmt(grad_err) + "; ";

  // Closed-form ∫g^{β+1} against composite Simpson quadrature.
  double quad_err = 0.0;
  for (double r : {0.01, 1.0, 4.0}) {
    for (double beta : {1e-4, 0.1, 0.5, 0.9}) {
      const double sd = std::sqrt(r);
      const int n = 20000;
      const double a = -40.0 * sd, h = 80.0 * sd / n;
      double s = 0.0;
      for (int i = 0; i <= n; ++i) {
        const double y = a + i * h;
        const double g = std::exp(-0.5 * y * y / r) / std::sqrt(2.0 * M_PI * r);
        s += (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0)) * std::pow(g, beta + 1.0);
      }
      s *= h / 3.0;
      quad_err = std::max(quad_err, std::abs(gaussian_power_integral(Matrix::Constant(1, 1, r), beta) - s));
    }
  }
  pass = pass && quad_err < 1e-6;
  detail += "quadrature " + fmt(quad_err) + "; ";

  // Rosenbrock.
  auto f = [](const Vector& x) { return std::pow(1.0 - x[0], 2) + 100.0 * std::pow(x[1] - x[0] * x[0], 2); };
  auto g = [](const Vector& x) {
    return Vector((Vector(2) << -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                   200.0 * (x[1] - x[0] * x[0]))
                      .finished());
  };
  auto gn = [](const Vector& x) {
    Matrix j(2, 2);
    j << -1.0, 0.0, -20.0 * x[0], 10.0;
    return Matrix(2.0 * j.transpose() * j);
  };
  SolverConfig sc;
  sc.max_iterations = 1000;
  const Vector x0 = (Vector(2) << -1.2, 1.0).finished();
  const double err_gn = (minimize(f, g, gn, x0, sc).x - Vector::Ones(2)).norm();
  const double err_bfgs = (minimize(f, g, nullptr, x0, sc).x - Vector::Ones(2)).norm();
  pass = pass && err_gn < 1e-6 && err_bfgs < 1e-6;
  detail += "rosenbrock GN " + fmt(err_gn) + " BFGS " + fmt(err_bfgs);
  return {pass, detail};
}

// Informational: synthetic vehicle ordering at both contamination levels.
Outcome vehicle() {
  ExperimentConfig config = pinned("fig10");
  bool pass = true;
  std::string detail;
  for (double p : {0.01, 0.05}) {
    config.contamination.p_c = p;
    const auto rows = summarize(run_experiment(config));
    const double ukf = mean_rmse(rows, "UKF");
    const double mhe = mean_rmse(rows, "MHE");
    const double beta = mean_rmse(rows, "beta-MHE");
    pass = pass && beta <= mhe && beta <= ukf;
    detail += "p_c=" + fmt(p) + ": UKF " + fmt(ukf) + " MHE " + fmt(mhe) + " beta " + fmt(beta) + "; ";
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<std::string, std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1", {"KF equivalence (T=1)", criterion1}},
      {"2", {"Wiener beta sweep ordering and U-shape", criterion2}},
      {"3", {"reactor contamination sweep ordering", criterion3}},
      {"4", {"timing parity", criterion4}},
      {"5", {"influence function vs epsilon oracle", criterion5}},
      {"6", {"boundedness dichotomy", criterion6}},
      {"7", {"beta -> 0 limit", criterion7}},
      {"8", {"numerical hygiene", criterion8}},
      {"vehicle", {"synthetic vehicle ordering (informational)", vehicle}},
  };
  std::vector<std::string> selected;
  if (argc == 3 && std::strcmp(argv[1], "--criterion") == 0) {
    if (!criteria.count(argv[2])) {
      std::cerr << "unknown criterion " << argv[2] << '\n';
      return 2;
    }
    selected.push_back(argv[2]);
  } else if (argc == 1) {
    for (const char* id : {"1", "2", "3", "4", "5", "6", "7", "8", "vehicle"}) selected.emplace_back(id);
  } else {
    std::cerr << "usage: acceptance [--criterion N]\n";
    return 2;
  }

  bool all = true;
  for (const auto& id : selected) {
    const auto& [title, fn] = criteria.at(id);
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << title << "  (" << fmt(secs)
              << " s)  " << o.detail << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
