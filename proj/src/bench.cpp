#include "rmhe/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rmhe/filters.hpp"

namespace rmhe {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config parsing

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

Vector to_vector(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Matrix to_matrix(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw ConfigError("empty matrix");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw ConfigError("ragged matrix");
    for (std::size_t k = 0; k < rows[i].size(); ++k) m(i, k) = rows[i][k];
  }
  return m;
}

ContaminationSpec parse_contamination(const json& j) {
  reject_unknown(j, {"p_c", "outlier"}, "contamination");
  ContaminationSpec spec;
  spec.p_c = j.value("p_c", 0.0);
  if (!j.contains("outlier")) return spec;
  const json& o = j.at("outlier");
  const std::string type = o.at("type").get<std::string>();
  if (type == "gaussian") {
    reject_unknown(o, {"type", "mean", "covariance", "variance", "dim"}, "gaussian outlier");
    GaussianOutlier g;
    if (o.contains("covariance")) {
      g.covariance = to_matrix(o.at("covariance"));
    } else {
      const int dim = o.at("dim").get<int>();
      g.covariance = o.at("variance").get<double>() * Matrix::Identity(dim, dim);
    }
    g.mean = o.contains("mean") ? to_vector(o.at("mean")) : Vector::Zero(g.covariance.rows());
    spec.outlier = g;
  } else if (type == "student_t") {
    reject_unknown(o, {"type", "nu", "scale"}, "student_t outlier");
    spec.outlier = StudentTOutlier{o.value("nu", 1.0), o.value("scale", 1.0)};
  } else if (type == "saturation") {
    reject_unknown(o, {"type", "value", "channels"}, "saturation outlier");
    spec.outlier = SaturationOutlier{o.at("value").get<double>(), o.at("channels").get<std::vector<int>>()};
  } else {
    throw ConfigError("unknown outlier type '" + type + "'");
  }
  return spec;
}

ArrivalFilter parse_arrival(const std::string& s) {
  if (s == "kf") return ArrivalFilter::KF;
  if (s == "ekf") return ArrivalFilter::EKF;
  if (s == "ukf") return ArrivalFilter::UKF;
  throw ConfigError("unknown arrival_filter '" + s + "'");
}

EstimatorType parse_estimator_type(const std::string& s) {
  if (s == "kf") return EstimatorType::KF;
  if (s == "ekf") return EstimatorType::EKF;
  if (s == "ukf") return EstimatorType::UKF;
  if (s == "mhe") return EstimatorType::MHE;
  throw ConfigError("unknown estimator type '" + s + "'");
}

UkfParams parse_ukf(const json& j) {
  reject_unknown(j, {"alpha", "beta_ut", "kappa"}, "ukf");
  UkfParams p;
  p.alpha = j.value("alpha", p.alpha);
  p.beta_ut = j.value("beta_ut", p.beta_ut);
  p.kappa = j.value("kappa", p.kappa);
  return p;
}

EstimatorSpec parse_estimator(const json& j) {
  reject_unknown(j, {"name", "type", "horizon", "stage_cost", "beta", "arrival_filter", "warm_start", "solver", "ukf"},
                 "estimator");
  EstimatorSpec e;
  e.name = j.at("name").get<std::string>();
  e.type = parse_estimator_type(j.at("type").get<std::string>());
  if (j.contains("ukf")) e.ukf = parse_ukf(j.at("ukf"));
  MheConfig& c = e.mhe;
  c.ukf = e.ukf;
  c.horizon = j.value("horizon", 1);
  const std::string cost = j.value("stage_cost", std::string("standard"));
  if (cost == "beta") {
    c.stage_cost = BetaCost{j.at("beta").get<double>()};
  } else if (cost != "standard") {
    throw ConfigError("unknown stage_cost '" + cost + "'");
  }
  c.arrival_filter = parse_arrival(j.value("arrival_filter", std::string("ekf")));
  c.warm_start = j.value("warm_start", true);
  if (j.contains("solver")) {
    const json& s = j.at("solver");
    reject_unknown(s,
                   {"max_iterations", "gradient_tolerance", "step_tolerance", "initial_damping", "damping_increase",
                    "damping_decrease"},
                   "solver");
    c.solver.max_iterations = s.value("max_iterations", c.solver.max_iterations);
    c.solver.gradient_tolerance = s.value("gradient_tolerance", c.solver.gradient_tolerance);
    c.solver.step_tolerance = s.value("step_tolerance", c.solver.step_tolerance);
    c.solver.initial_damping = s.value("initial_damping", c.solver.initial_damping);
    c.solver.damping_increase = s.value("damping_increase", c.solver.damping_increase);
    c.solver.damping_decrease = s.value("damping_decrease", c.solver.damping_decrease);
  }
  return e;
}

ModelKind parse_model(const std::string& s) {
  if (s == "wiener") return ModelKind::Wiener;
  if (s == "reactor") return ModelKind::Reactor;
  if (s == "vehicle") return ModelKind::Vehicle;
  throw ConfigError("unknown model '" + s + "'");
}

// ---------------------------------------------------------------------------
// Estimation helpers

template <typename Fn>
double elapsed_ms(Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

std::vector<Vector> run_filter(const EstimatorSpec& spec, const ExperimentModel& em,
                               std::span<const Vector> measurements, double& total_ms) {
  FilterState state{em.model.initial, 0};
  std::vector<Vector> out;
  out.reserve(measurements.size());
  const Vector none;
  for (std::size_t k = 0; k < measurements.size(); ++k) {
    const Vector& u = em.controls.empty() ? none : em.controls[k];
    total_ms += elapsed_ms([&] {
      switch (spec.type) {
        case EstimatorType::KF:
          state = kf_step(*em.linear, state, measurements[k]);
          break;
        case EstimatorType::EKF:
          state = ekf_covariance_step(em.model, state, measurements[k], u);
          break;
        case EstimatorType::UKF:
          state = ukf_step(em.model, state, measurements[k], spec.ukf, u);
          break;
        case EstimatorType::MHE:
          break;
      }
    });
    if (!state.posterior.mean.allFinite()) throw ConditioningError(spec.name + " produced a non-finite estimate");
    out.push_back(state.posterior.mean);
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("cannot parse number '" + s + "'");
  return v;
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double from_num(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

json to_json(const TrialResult& r) {
  json errors = json::array();
  for (const auto& e : r.state_errors) errors.push_back(std::vector<double>(e.data(), e.data() + e.size()));
  return {{"estimator", r.estimator},       {"trial", r.trial},         {"rmse", num(r.rmse)},
          {"step_errors", r.step_errors},   {"state_errors", errors},   {"mean_step_ms", num(r.mean_step_ms)},
          {"status", r.status},             {"message", r.message},     {"data_checksum", r.data_checksum}};
}

TrialResult from_json(const json& j) {
  TrialResult r;
  r.estimator = j.at("estimator").get<std::string>();
  r.trial = j.at("trial").get<int>();
  r.rmse = from_num(j.at("rmse"));
  r.step_errors = j.at("step_errors").get<std::vector<double>>();
  for (const auto& e : j.at("state_errors")) r.state_errors.push_back(to_vector(e));
  r.mean_step_ms = from_num(j.at("mean_step_ms"));
  r.status = j.at("status").get<std::string>();
  r.message = j.value("message", std::string());
  r.data_checksum = j.at("data_checksum").get<std::uint64_t>();
  return r;
}

void make_dirs(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) make_dirs(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (schema_version != kSchemaVersion) {
    throw ConfigError("unsupported schema_version " + std::to_string(schema_version));
  }
  if (n_trials < 1) throw ConfigError("n_trials must be >= 1");
  if (n_steps < 1) throw ConfigError("n_steps must be >= 1");
  if (workers < 0) throw ConfigError("workers must be >= 0");
  if (estimators.empty()) throw ConfigError("at least one estimator is required");
  std::set<std::string> names;
  for (const auto& e : estimators) {
    if (e.name.empty()) throw ConfigError("estimator names must be non-empty");
    if (!names.insert(e.name).second) throw ConfigError("duplicate estimator name '" + e.name + "'");
    const bool wants_kf =
        e.type == EstimatorType::KF || (e.type == EstimatorType::MHE && e.mhe.arrival_filter == ArrivalFilter::KF);
    if (wants_kf && model != ModelKind::Wiener) throw ConfigError("estimator '" + e.name + "' needs a linear model");
    try {
      if (e.type == EstimatorType::MHE) e.mhe.validate();
      if (e.type == EstimatorType::UKF) ukf_weights(1, e.ukf);
    } catch (const DomainError& err) {
      throw ConfigError("estimator '" + e.name + "': " + err.what());
    }
  }
  if (!sweep_estimator.empty()) {
    const auto it = std::find_if(estimators.begin(), estimators.end(),
                                 [&](const EstimatorSpec& e) { return e.name == sweep_estimator; });
    if (it == estimators.end() || it->type != EstimatorType::MHE) {
      throw ConfigError("sweep_estimator must name an MHE estimator");
    }
  }
  for (double b : beta_grid) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta_grid values must lie in (0, 1)");
  }
  for (double p : pc_grid) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("pc_grid values must lie in [0, 1]");
  }
  const ExperimentModel em = build_model(*this);
  try {
    contamination.validate(em.model.m);
  } catch (const Error& err) {
    throw ConfigError(std::string("contamination: ") + err.what());
  }
  if (!em.controls.empty() && static_cast<int>(em.controls.size()) < n_steps) {
    throw ConfigError("fixture holds fewer controls than n_steps");
  }
}

ExperimentConfig ExperimentConfig::parse(const std::string& json_text, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  try {
    const json j = json::parse(json_text);
    reject_unknown(j,
                   {"schema_version", "model", "vehicle_fixture", "contamination", "estimators", "n_trials", "n_steps",
                    "base_seed", "beta_grid", "pc_grid", "sweep_estimator", "workers", "description"},
                   "experiment config");
    c.schema_version = j.at("schema_version").get<int>();
    c.model = parse_model(j.at("model").get<std::string>());
    if (j.contains("vehicle_fixture")) c.vehicle_fixture = base_dir / j.at("vehicle_fixture").get<std::string>();
    if (j.contains("contamination")) c.contamination = parse_contamination(j.at("contamination"));
    for (const auto& e : j.at("estimators")) c.estimators.push_back(parse_estimator(e));
    c.n_trials = j.value("n_trials", c.n_trials);
    c.n_steps = j.value("n_steps", c.n_steps);
    c.base_seed = j.value("base_seed", c.base_seed);
    if (j.contains("beta_grid")) c.beta_grid = j.at("beta_grid").get<std::vector<double>>();
    if (j.contains("pc_grid")) c.pc_grid = j.at("pc_grid").get<std::vector<double>>();
    c.sweep_estimator = j.value("sweep_estimator", std::string());
    c.workers = j.value("workers", 0);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open config");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.parent_path());
}

ExperimentModel build_model(const ExperimentConfig& config) {
  ExperimentModel em;
  switch (config.model) {
    case ModelKind::Wiener:
      em.linear = wiener_velocity_model();
      em.model = as_nonlinear(*em.linear);
      break;
    case ModelKind::Reactor:
      em.model = gas_reactor_model();
      break;
    case ModelKind::Vehicle: {
      if (config.vehicle_fixture.empty()) throw ConfigError("vehicle model needs vehicle_fixture");
      const VehicleFixture fx = load_vehicle_fixture(config.vehicle_fixture.string());
      em.model = warehouse_vehicle_model(fx.params);
      em.controls = fx.controls;
      break;
    }
  }
  return em;
}

// ---------------------------------------------------------------------------

double rmse(std::span<const Vector> truth, std::span<const Vector> estimates, int n) {
  if (truth.size() != estimates.size()) throw DimensionError("rmse: sequences differ in length");
  if (truth.empty() || n < 1) throw DimensionError("rmse: empty sequence");
  double total = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) total += (truth[t] - estimates[t]).squaredNorm();
  return std::sqrt(total / (static_cast<double>(n) * static_cast<double>(truth.size())));
}

std::uint64_t measurement_checksum(std::span<const Vector> measurements) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& y : measurements) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(y.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(y.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

TrialResult run_trial(const EstimatorSpec& estimator, const ExperimentModel& em, const Trajectory& trajectory,
                      int trial) {
  TrialResult r;
  r.estimator = estimator.name;
  r.trial = trial;
  r.data_checksum = measurement_checksum(trajectory.measurements);
  const auto n_steps = trajectory.measurements.size();
  try {
    std::vector<Vector> estimates;
    if (estimator.type == EstimatorType::MHE) {
      const EstimateTrace trace = run_estimator(em.model, trajectory.measurements, em.controls, estimator.mhe);
      double total = 0.0;
      for (const auto& d : trace.diagnostics) total += d.wall_ms;
      r.mean_step_ms = total / static_cast<double>(n_steps);
      estimates = trace.estimates;
    } else {
      double total = 0.0;
      estimates = run_filter(estimator, em, trajectory.measurements, total);
      r.mean_step_ms = total / static_cast<double>(n_steps);
    }
    const std::span<const Vector> truth(trajectory.states.data() + 1, n_steps);
    r.rmse = rmse(truth, estimates, em.model.n);
    for (std::size_t t = 0; t < n_steps; ++t) {
      r.state_errors.push_back(estimates[t] - truth[t]);
      r.step_errors.push_back(r.state_errors.back().norm());
    }
  } catch (const Error& e) {
    r.rmse = std::numeric_limits<double>::quiet_NaN();
    r.status = "failed";
    r.message = e.what();
    r.step_errors.clear();
    r.state_errors.clear();
  }
  return r;
}

std::vector<TrialResult> run_experiment(const ExperimentConfig& config) {
  config.validate();
  const ExperimentModel em = build_model(config);
  const int n_trials = config.n_trials;
  std::vector<std::vector<TrialResult>> per_trial(n_trials);
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&] {
    for (int k = next++; k < n_trials; k = next++) {
      try {
        std::vector<TrialResult>& slot = per_trial[k];
        Trajectory traj;
        try {
          traj = simulate_trajectory(em.model, config.contamination, config.n_steps,
                                     sub_seed(config.base_seed, static_cast<std::uint64_t>(k)), em.controls);
        } catch (const Error& e) {
          for (const auto& est : config.estimators) {
            TrialResult r;
            r.estimator = est.name;
            r.trial = k;
            r.rmse = std::numeric_limits<double>::quiet_NaN();
            r.status = "failed";
            r.message = std::string("simulation: ") + e.what();
            slot.push_back(std::move(r));
          }
          continue;
        }
        for (const auto& est : config.estimators) slot.push_back(run_trial(est, em, traj, k));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  int workers = config.workers > 0 ? config.workers : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, n_trials);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<TrialResult> results;
  for (auto& slot : per_trial) {
    for (auto& r : slot) results.push_back(std::move(r));
  }
  std::map<std::string, int> order;
  for (std::size_t i = 0; i < config.estimators.size(); ++i) order[config.estimators[i].name] = static_cast<int>(i);
  std::stable_sort(results.begin(), results.end(), [&](const TrialResult& a, const TrialResult& b) {
    const int oa = order[a.estimator];
    const int ob = order[b.estimator];
    return oa != ob ? oa < ob : a.trial < b.trial;
  });
  return results;
}

std::string beta_label(const std::string& base, double beta) { return base + "[beta=" + format_double(beta) + "]"; }

double parse_beta_label(const std::string& name) {
  const auto open = name.rfind("[beta=");
  if (open == std::string::npos || name.back() != ']') return std::numeric_limits<double>::quiet_NaN();
  return parse_double(name.substr(open + 6, name.size() - open - 7));
}

ExperimentConfig expand_beta_sweep(const ExperimentConfig& config) {
  if (config.sweep_estimator.empty()) throw ConfigError("beta sweep needs sweep_estimator");
  if (config.beta_grid.empty()) throw ConfigError("beta sweep needs a non-empty beta_grid");
  ExperimentConfig out = config;
  out.estimators.clear();
  for (const auto& e : config.estimators) {
    if (e.name != config.sweep_estimator) {
      out.estimators.push_back(e);
      continue;
    }
    for (double beta : config.beta_grid) {
      EstimatorSpec clone = e;
      clone.name = beta_label(e.name, beta);
      clone.mhe.stage_cost = BetaCost{beta};
      out.estimators.push_back(std::move(clone));
    }
  }
  out.sweep_estimator.clear();
  return out;
}

std::vector<TrialResult> sweep_beta(const ExperimentConfig& config) {
  return run_experiment(expand_beta_sweep(config));
}

std::vector<PcSweepPoint> sweep_pc(const ExperimentConfig& config) {
  if (config.pc_grid.empty()) throw ConfigError("p_c sweep needs a non-empty pc_grid");
  std::vector<PcSweepPoint> out;
  for (double p : config.pc_grid) {
    ExperimentConfig c = config;
    c.contamination.p_c = p;
    out.push_back({p, run_experiment(c)});
  }
  return out;
}

// ---------------------------------------------------------------------------

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<SummaryRow> summarize(std::span<const TrialResult> results) {
  std::vector<std::string> names;
  std::map<std::string, std::vector<const TrialResult*>> groups;
  for (const auto& r : results) {
    if (!groups.count(r.estimator)) names.push_back(r.estimator);
    groups[r.estimator].push_back(&r);
  }
  std::vector<SummaryRow> rows;
  for (const auto& name : names) {
    SummaryRow row;
    row.estimator = name;
    std::vector<double> vals;
    double ms = 0.0;
    for (const auto* r : groups[name]) {
      if (r->status == "ok") {
        vals.push_back(r->rmse);
        ms += r->mean_step_ms;
      } else {
        ++row.n_failed;
      }
    }
    row.n_ok = static_cast<int>(vals.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (vals.empty()) {
      row.mean = row.std = row.median = row.q25 = row.q75 = row.min = row.max = row.mean_step_ms = nan;
    } else {
      const Eigen::Map<const Vector> v(vals.data(), static_cast<Eigen::Index>(vals.size()));
      row.mean = v.mean();
      row.std = vals.size() > 1 ? std::sqrt((v.array() - row.mean).square().sum() / (vals.size() - 1.0)) : 0.0;
      row.median = quantile(vals, 0.5);
      row.q25 = quantile(vals, 0.25);
      row.q75 = quantile(vals, 0.75);
      row.min = v.minCoeff();
      row.max = v.maxCoeff();
      row.mean_step_ms = ms / static_cast<double>(vals.size());
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<ErrorBand> error_bands(std::span<const TrialResult> results) {
  std::vector<std::string> names;
  std::map<std::string, std::vector<const TrialResult*>> groups;
  for (const auto& r : results) {
    if (!groups.count(r.estimator)) names.push_back(r.estimator);
    if (r.status == "ok") groups[r.estimator].push_back(&r);
  }
  std::vector<ErrorBand> out;
  for (const auto& name : names) {
    const auto& g = groups[name];
    if (g.empty()) continue;
    const std::size_t steps = g.front()->state_errors.size();
    const auto n = g.front()->state_errors.empty() ? 0 : g.front()->state_errors.front().size();
    for (std::size_t t = 0; t < steps; ++t) {
      for (Eigen::Index j = 0; j < n; ++j) {
        std::vector<double> v;
        for (const auto* r : g) v.push_back(r->state_errors[t][j]);
        ErrorBand b;
        b.estimator = name;
        b.t = static_cast<int>(t) + 1;
        b.state = static_cast<int>(j);
        b.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        b.lower = quantile(v, 0.025);
        b.upper = quantile(v, 0.975);
        out.push_back(b);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

ExportFormat parse_format(const std::string& text) {
  if (text == "csv") return ExportFormat::Csv;
  if (text == "json") return ExportFormat::Json;
  throw ConfigError("unknown format '" + text + "' (expected csv or json)");
}

void export_results(std::span<const TrialResult> results, const std::filesystem::path& path, ExportFormat format) {
  std::ofstream out = open_out(path);
  if (format == ExportFormat::Csv) {
    out << "estimator,trial,rmse,mean_step_ms,status\n";
    for (const auto& r : results) {
      out << csv_field(r.estimator) << ',' << r.trial << ',' << format_double(r.rmse) << ','
          << format_double(r.mean_step_ms) << ',' << csv_field(r.status) << '\n';
    }
  } else {
    json arr = json::array();
    for (const auto& r : results) arr.push_back(to_json(r));
    out << json{{"schema_version", 1}, {"results", arr}}.dump(1) << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

std::vector<TrialResult> read_results(const std::filesystem::path& path, ExportFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open results");
  std::vector<TrialResult> out;
  if (format == ExportFormat::Csv) {
    std::string line;
    if (!std::getline(in, line) || line != "estimator,trial,rmse,mean_step_ms,status") {
      throw IoError(path.string(), "unexpected CSV header");
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      if (f.size() != 5) throw IoError(path.string(), "malformed CSV row");
      TrialResult r;
      r.estimator = f[0];
      r.trial = std::stoi(f[1]);
      r.rmse = parse_double(f[2]);
      r.mean_step_ms = parse_double(f[3]);
      r.status = f[4];
      out.push_back(std::move(r));
    }
  } else {
    try {
      json doc;
      in >> doc;
      for (const auto& j : doc.at("results")) out.push_back(from_json(j));
    } catch (const json::exception& e) {
      throw IoError(path.string(), std::string("malformed JSON results: ") + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& figure_ids() {
  static const std::vector<std::string> ids = {"fig2", "fig3", "fig4", "fig5", "fig9", "fig10"};
  return ids;
}

namespace {

struct LabeledRow {
  double p_c;
  SummaryRow row;
};

void write_summary(const std::filesystem::path& path, const std::vector<LabeledRow>& rows) {
  std::ofstream out = open_out(path);
  out << "p_c,estimator,beta,n_ok,n_failed,mean,std,median,q25,q75,min,max,mean_step_ms\n";
  for (const auto& [p, r] : rows) {
    const double beta = parse_beta_label(r.estimator);
    out << format_double(p) << ',' << csv_field(r.estimator) << ',' << (std::isnan(beta) ? "" : format_double(beta))
        << ',' << r.n_ok << ',' << r.n_failed << ',' << format_double(r.mean) << ',' << format_double(r.std) << ','
        << format_double(r.median) << ',' << format_double(r.q25) << ',' << format_double(r.q75) << ','
        << format_double(r.min) << ',' << format_double(r.max) << ',' << format_double(r.mean_step_ms) << '\n';
  }
}

void write_bands(const std::filesystem::path& path, const std::vector<ErrorBand>& bands) {
  std::ofstream out = open_out(path);
  out << "estimator,t,state,mean,lower,upper\n";
  for (const auto& b : bands) {
    out << csv_field(b.estimator) << ',' << b.t << ',' << b.state << ',' << format_double(b.mean) << ','
        << format_double(b.lower) << ',' << format_double(b.upper) << '\n';
  }
}

void tally(ReproductionOutcome& outcome, const std::vector<TrialResult>& results) {
  outcome.total_trials += static_cast<int>(results.size());
  for (const auto& r : results) outcome.failed_trials += r.status != "ok";
}

std::string pc_tag(double p) { return "pc" + format_double(p); }

}  // namespace

ReproductionOutcome run_reproduction(const std::string& figure, const ExperimentConfig& config,
                                     const std::filesystem::path& out_dir) {
  const auto& ids = figure_ids();
  if (std::find(ids.begin(), ids.end(), figure) == ids.end()) {
    std::string list;
    for (const auto& id : ids) list += (list.empty() ? "" : ", ") + id;
    throw ConfigError("unknown figure '" + figure + "'; valid ids: " + list);
  }
  make_dirs(out_dir);
  ReproductionOutcome outcome;
  std::vector<LabeledRow> summary;
  auto emit = [&](const std::filesystem::path& name, const std::vector<TrialResult>& results, double p) {
    export_results(results, out_dir / name, ExportFormat::Csv);
    outcome.files.push_back(out_dir / name);
    for (const auto& row : summarize(results)) summary.push_back({p, row});
    tally(outcome, results);
  };

  if (figure == "fig2") {
    emit("trials.csv", sweep_beta(config), config.contamination.p_c);
  } else if (figure == "fig4") {
    for (const auto& point : sweep_pc(config)) emit("trials_" + pc_tag(point.p_c) + ".csv", point.results, point.p_c);
  } else if (figure == "fig9") {
    for (double p : config.pc_grid) {
      ExperimentConfig c = config;
      c.contamination.p_c = p;
      emit("trials_" + pc_tag(p) + ".csv", sweep_beta(c), p);
    }
  } else {
    const std::vector<TrialResult> results = run_experiment(config);
    emit("trials.csv", results, config.contamination.p_c);
    write_bands(out_dir / "error_bands.csv", error_bands(results));
    outcome.files.push_back(out_dir / "error_bands.csv");
    if (figure == "fig10") {
      const ExperimentModel em = build_model(config);
      const Trajectory traj =
          simulate_trajectory(em.model, config.contamination, config.n_steps, sub_seed(config.base_seed, 0), em.controls);
      std::ofstream out = open_out(out_dir / "trajectory.csv");
      out << "source,t";
      for (int j = 0; j < em.model.n; ++j) out << ",x" << j;
      out << '\n';
      for (int t = 0; t <= config.n_steps; ++t) {
        out << "truth," << t;
        for (int j = 0; j < em.model.n; ++j) out << ',' << format_double(traj.states[t][j]);
        out << '\n';
      }
      for (const auto& r : results) {
        if (r.trial != 0 || r.status != "ok") continue;
        for (int t = 1; t <= config.n_steps; ++t) {
          const Vector est = traj.states[t] + r.state_errors[t - 1];
          out << csv_field(r.estimator) << ',' << t;
          for (int j = 0; j < em.model.n; ++j) out << ',' << format_double(est[j]);
          out << '\n';
        }
      }
      outcome.files.push_back(out_dir / "trajectory.csv");
    }
  }
  write_summary(out_dir / "summary.csv", summary);
  outcome.files.push_back(out_dir / "summary.csv");
  return outcome;
}

}  // namespace rmhe
