#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "rmhe/bench.hpp"
#include "rmhe/robustness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rmhe;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string format = "csv";
  int verbosity = 1;
  std::string figure;
};

int default_workers() {
  if (const char* env = std::getenv("ROBUST_MHE_WORKERS")) {
    try {
      return std::max(0, std::stoi(env));
    } catch (const std::exception&) {
      throw ConfigError(std::string("ROBUST_MHE_WORKERS is not an integer: ") + env);
    }
  }
  return -1;
}

ExperimentConfig load_experiment(const Options& opt) {
  ExperimentConfig config = ExperimentConfig::load(opt.config);
  if (opt.seed) config.base_seed = *opt.seed;
  if (opt.workers) {
    config.workers = *opt.workers;
  } else if (const int env = default_workers(); env >= 0) {
    config.workers = env;
  }
  return config;
}

void print_summary(const std::vector<SummaryRow>& rows, const std::string& prefix = "") {
  std::cout << std::left << std::setw(28) << "estimator" << std::right << std::setw(6) << "ok" << std::setw(6)
            << "fail" << std::setw(12) << "mean" << std::setw(12) << "std" << std::setw(12) << "median"
            << std::setw(12) << "ms/step" << '\n';
  for (const auto& r : rows) {
    std::cout << std::left << std::setw(28) << (prefix + r.estimator) << std::right << std::setw(6) << r.n_ok
              << std::setw(6) << r.n_failed << std::setw(12) << std::setprecision(5) << r.mean << std::setw(12)
              << r.std << std::setw(12) << r.median << std::setw(12) << r.mean_step_ms << '\n';
  }
}

int warn_failures(const std::vector<TrialResult>& results, const Options& opt) {
  int failed = 0;
  for (const auto& r : results) {
    if (r.status == "ok") continue;
    ++failed;
    if (opt.verbosity > 1) std::cerr << "warning: " << r.estimator << " trial " << r.trial << ": " << r.message << '\n';
  }
  if (failed > 0 && opt.verbosity > 0) {
    std::cerr << "warning: " << failed << " of " << results.size() << " estimator runs failed\n";
  }
  return 0;
}

std::string require_out(const Options& opt) {
  if (opt.out.empty()) throw ConfigError("--out is required");
  return opt.out;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Options& opt) {
  const ExperimentConfig config = load_experiment(opt);
  const ExperimentModel em = build_model(config);
  const Trajectory traj =
      simulate_trajectory(em.model, config.contamination, config.n_steps, config.base_seed, em.controls);
  std::ofstream out(require_out(opt));
  if (!out) throw IoError(opt.out, "cannot open for writing");
  out << "t";
  for (int j = 0; j < em.model.n; ++j) out << ",x" << j;
  for (int j = 0; j < em.model.m; ++j) out << ",y" << j;
  out << ",outlier_flag\n";
  for (int t = 0; t <= traj.n_steps(); ++t) {
    out << t;
    for (int j = 0; j < em.model.n; ++j) out << ',' << format_double(traj.states[t][j]);
    for (int j = 0; j < em.model.m; ++j) out << ',' << (t == 0 ? "" : format_double(traj.measurements[t - 1][j]));
    out << ',' << (t == 0 ? 0 : static_cast<int>(traj.outlier_flags[t - 1])) << '\n';
  }
  if (opt.verbosity > 0) std::cout << "wrote " << traj.n_steps() << " steps to " << opt.out << '\n';
  return 0;
}

int cmd_estimate(const Options& opt, bool beta_sweep) {
  const ExperimentConfig config = load_experiment(opt);
  const ExportFormat format = parse_format(opt.format);
  const auto results = beta_sweep ? sweep_beta(config) : run_experiment(config);
  export_results(results, require_out(opt), format);
  if (opt.verbosity > 0) print_summary(summarize(results));
  return warn_failures(results, opt);
}

int cmd_sweep_pc(const Options& opt) {
  const ExperimentConfig config = load_experiment(opt);
  const ExportFormat format = parse_format(opt.format);
  std::vector<TrialResult> all;
  for (auto& point : sweep_pc(config)) {
    const std::string tag = "[p_c=" + format_double(point.p_c) + "]";
    if (opt.verbosity > 0) {
      std::cout << "p_c = " << point.p_c << '\n';
      print_summary(summarize(point.results), "  ");
    }
    for (auto& r : point.results) {
      r.estimator += tag;
      all.push_back(std::move(r));
    }
  }
  export_results(all, require_out(opt), format);
  return warn_failures(all, opt);
}

// ---------------------------------------------------------------------------

struct IfAnalysis {
  NonlinearModel model;
  HorizonWindow window;
  StageCostKind kind;
  std::vector<Vector> grid;
  HessianMode mode = HessianMode::Analytic;
};

Matrix json_matrix(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != static_cast<std::size_t>(m.cols())) throw ConfigError("ragged matrix");
    for (std::size_t k = 0; k < rows[i].size(); ++k) m(i, k) = rows[i][k];
  }
  return m;
}

Vector json_vector(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

IfAnalysis load_if_analysis(const Options& opt) {
  std::ifstream in(opt.config);
  if (!in) throw IoError(opt.config, "cannot open config");
  IfAnalysis a;
  try {
    json j;
    in >> j;
    for (const auto& [key, _] : j.items()) {
      static const std::set<std::string> allowed = {"schema_version", "model", "linear", "stage_cost", "beta",
                                                    "horizon", "seed", "window", "z_grid", "hessian",
                                                    "description"};
      if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in analyze-if config");
    }
    if (j.at("schema_version").get<int>() != 1) throw ConfigError("unsupported schema_version");
    LinearGaussianModel lin;
    const std::string model = j.value("model", std::string("wiener"));
    if (model == "wiener") {
      lin = wiener_velocity_model();
    } else if (model == "linear") {
      const json& l = j.at("linear");
      lin.A = json_matrix(l.at("A"));
      lin.C = json_matrix(l.at("C"));
      lin.Q = json_matrix(l.at("Q"));
      lin.R = json_matrix(l.at("R"));
      lin.initial.mean = json_vector(l.at("initial_mean"));
      lin.initial.covariance = json_matrix(l.at("initial_cov"));
    } else {
      throw ConfigError("analyze-if supports model 'wiener' or 'linear'");
    }
    lin.validate();
    a.model = as_nonlinear(lin);

    const std::string cost = j.at("stage_cost").get<std::string>();
    if (cost == "beta") {
      a.kind = BetaCost{j.at("beta").get<double>()};
    } else if (cost == "standard") {
      a.kind = StandardCost{};
    } else {
      throw ConfigError("stage_cost must be 'standard' or 'beta'");
    }
    validate(a.kind);

    const int horizon = j.value("horizon", 1);
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    const std::uint64_t seed = opt.seed ? *opt.seed : j.value("seed", std::uint64_t{0});
    const std::string window = j.value("window", std::string("simulated"));
    a.window.t = horizon;
    a.window.anchor_cov = lin.initial.covariance;
    if (window == "simulated") {
      const Trajectory traj = simulate_trajectory(lin, ContaminationSpec::none(), horizon, seed);
      a.window.anchor_mean = lin.initial.mean;
      a.window.measurements = traj.measurements;
    } else if (window == "noise_free") {
      Rng rng(seed);
      Vector x = rng.gaussian(lin.initial.mean, lin.initial.covariance);
      a.window.anchor_mean = x;
      for (int t = 0; t < horizon; ++t) {
        x = lin.A * x;
        a.window.measurements.push_back(lin.C * x);
      }
    } else {
      throw ConfigError("window must be 'simulated' or 'noise_free'");
    }

    const json& g = j.at("z_grid");
    const Vector direction = g.contains("direction") ? json_vector(g.at("direction")) : Vector::Ones(lin.C.rows());
    a.grid = geometric_z_grid(Vector::Zero(lin.C.rows()), direction, g.at("min").get<double>(),
                              g.at("max").get<double>(), g.at("points").get<int>());
    const std::string hess = j.value("hessian", std::string("analytic"));
    if (hess == "finite_difference") {
      a.mode = HessianMode::FiniteDifference;
    } else if (hess != "analytic") {
      throw ConfigError("hessian must be 'analytic' or 'finite_difference'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed analyze-if config: ") + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return a;
}

int cmd_analyze_if(const Options& opt) {
  const IfAnalysis a = load_if_analysis(opt);
  const WindowObjective obj(a.window, a.model, a.kind);
  const auto solution = solve_window_precise(obj, cold_start(a.window), precise_solver_config());
  const SensitivityReport report = gross_error_sensitivity(a.window, solution, a.model, a.kind, a.grid, a.mode);
  const std::string text = to_json(report);
  if (opt.out.empty()) {
    std::cout << text << '\n';
  } else {
    std::ofstream out(opt.out);
    if (!out) throw IoError(opt.out, "cannot open for writing");
    out << text << '\n';
    if (opt.verbosity > 0) {
      std::cout << "verdict: " << report.verdict << ", empirical sup " << report.empirical_sup << ", bound "
                << report.bound << ", growth ratio " << report.growth_ratio << '\n';
    }
  }
  return 0;
}

int cmd_reproduce(const Options& opt) {
  const auto& ids = figure_ids();
  if (std::find(ids.begin(), ids.end(), opt.figure) == ids.end()) {
    std::cerr << "unknown figure '" << opt.figure << "'; valid ids:";
    for (const auto& id : ids) std::cerr << ' ' << id;
    std::cerr << '\n';
    return 2;
  }
  Options o = opt;
  if (o.config.empty()) o.config = (fs::path(RMHE_SOURCE_DIR) / "configs" / (opt.figure + ".json")).string();
  if (o.out.empty()) o.out = (fs::path("results") / opt.figure).string();
  const ExperimentConfig config = load_experiment(o);
  const ReproductionOutcome outcome = run_reproduction(opt.figure, config, o.out);
  if (opt.verbosity > 0) {
    for (const auto& f : outcome.files) std::cout << "wrote " << f.string() << '\n';
  }
  if (outcome.failed_trials > 0 && opt.verbosity > 0) {
    std::cerr << "warning: " << outcome.failed_trials << " of " << outcome.total_trials
              << " estimator runs failed\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Moving horizon estimation with beta-divergence stage costs"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", opt.config, "Experiment config (JSON)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "Output path");
    sub->add_option("--seed", opt.seed, "Override the base seed");
    sub->add_option("--workers", opt.workers, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
    sub->add_option("--format", opt.format, "Result format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_flag_callback("-v,--verbose", [&] { opt.verbosity = 2; }, "Verbose output");
    sub->add_flag_callback("-q,--quiet", [&] { opt.verbosity = 0; }, "Quiet output");
  };

  auto* simulate = app.add_subcommand("simulate", "Simulate one trajectory to CSV");
  auto* estimate = app.add_subcommand("estimate", "Run every configured estimator over seeded trials");
  auto* sweep_b = app.add_subcommand("sweep-beta", "Sweep beta for the config's sweep_estimator");
  auto* sweep_p = app.add_subcommand("sweep-pc", "Sweep the contamination probability");
  auto* analyze = app.add_subcommand("analyze-if", "Influence-function sensitivity report (JSON)");
  auto* reproduce = app.add_subcommand("reproduce", "Run a pinned figure experiment");
  for (auto* sub : {simulate, estimate, sweep_b, sweep_p, analyze}) add_common(sub, true);
  add_common(reproduce, false);
  reproduce->add_option("figure", opt.figure, "Figure id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*simulate) return cmd_simulate(opt);
    if (*estimate) return cmd_estimate(opt, false);
    if (*sweep_b) return cmd_estimate(opt, true);
    if (*sweep_p) return cmd_sweep_pc(opt);
    if (*analyze) return cmd_analyze_if(opt);
    if (*reproduce) return cmd_reproduce(opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
