#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmhe/mhe.hpp"
#include "rmhe/models.hpp"

namespace rmhe {

enum class EstimatorType { KF, EKF, UKF, MHE };

struct EstimatorSpec {
  std::string name;
  EstimatorType type = EstimatorType::MHE;
  MheConfig mhe;   // used when type == MHE
  UkfParams ukf;   // used when type == UKF
};

enum class ModelKind { Wiener, Reactor, Vehicle };

struct ExperimentConfig {
  static constexpr int kSchemaVersion = 1;

  int schema_version = kSchemaVersion;
  ModelKind model = ModelKind::Wiener;
  std::filesystem::path vehicle_fixture;  // resolved against the config's directory
  ContaminationSpec contamination;
  std::vector<EstimatorSpec> estimators;
  int n_trials = 1;
  int n_steps = 200;
  std::uint64_t base_seed = 0;
  std::vector<double> beta_grid = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  std::vector<double> pc_grid = {0.0, 0.1, 0.2, 0.3};
  std::string sweep_estimator;  // β-MHE entry cloned by sweep_beta
  int workers = 0;              // 0: hardware concurrency

  void validate() const;
  static ExperimentConfig parse(const std::string& json_text, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// Model plus controls (vehicle only) selected by a config.
struct ExperimentModel {
  NonlinearModel model;
  std::optional<LinearGaussianModel> linear;
  std::vector<Vector> controls;
};

ExperimentModel build_model(const ExperimentConfig& config);

struct TrialResult {
  std::string estimator;
  int trial = 0;
  double rmse = 0.0;                  // NaN when the estimator failed
  std::vector<double> step_errors;    // ‖x_t − x̂_t‖, t = 1..N
  std::vector<Vector> state_errors;   // x̂_t − x_t, t = 1..N
  double mean_step_ms = 0.0;
  std::string status = "ok";          // "ok" or "failed"
  std::string message;
  std::uint64_t data_checksum = 0;    // FNV-1a of the measurement bytes
};

/// sqrt(Σ_t ‖x_t − x̂_t‖² / (n · N)).
double rmse(std::span<const Vector> truth, std::span<const Vector> estimates, int n);

std::uint64_t measurement_checksum(std::span<const Vector> measurements);

/// Runs one estimator over a simulated trajectory (x_0 excluded from the
/// error), timing each step on a monotonic clock.
TrialResult run_trial(const EstimatorSpec& estimator, const ExperimentModel& model, const Trajectory& trajectory,
                      int trial);

/// Simulates every trial with seed base_seed ⊕ trial and runs all estimators
/// on the same trajectory. Results are sorted by (estimator, trial).
std::vector<TrialResult> run_experiment(const ExperimentConfig& config);

/// Name given to the clone of `base` at a β value.
std::string beta_label(const std::string& base, double beta);
double parse_beta_label(const std::string& name);

/// Baselines plus one clone of the sweep estimator per β in beta_grid.
ExperimentConfig expand_beta_sweep(const ExperimentConfig& config);

std::vector<TrialResult> sweep_beta(const ExperimentConfig& config);

struct PcSweepPoint {
  double p_c = 0.0;
  std::vector<TrialResult> results;
};

std::vector<PcSweepPoint> sweep_pc(const ExperimentConfig& config);

struct SummaryRow {
  std::string estimator;
  int n_ok = 0;
  int n_failed = 0;
  double mean = 0.0;
  double std = 0.0;
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  double min = 0.0;
  double max = 0.0;
  double mean_step_ms = 0.0;
};

/// One row per estimator in first-appearance order; RMSE statistics over
/// successful trials only.
std::vector<SummaryRow> summarize(std::span<const TrialResult> results);

/// Linear-interpolated quantile of unsorted data, q ∈ [0, 1].
double quantile(std::vector<double> values, double q);

struct ErrorBand {
  std::string estimator;
  int t = 0;
  int state = 0;
  double mean = 0.0;
  double lower = 0.0;  // 2.5 % quantile
  double upper = 0.0;  // 97.5 % quantile
};

std::vector<ErrorBand> error_bands(std::span<const TrialResult> results);

enum class ExportFormat { Csv, Json };

ExportFormat parse_format(const std::string& text);

void export_results(std::span<const TrialResult> results, const std::filesystem::path& path, ExportFormat format);
std::vector<TrialResult> read_results(const std::filesystem::path& path, ExportFormat format);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// Figure ids accepted by run_reproduction.
const std::vector<std::string>& figure_ids();

struct ReproductionOutcome {
  std::vector<std::filesystem::path> files;
  int failed_trials = 0;
  int total_trials = 0;
};

/// Runs the pinned experiment for a figure and writes plot-ready data and a
/// summary table into `out_dir`.
ReproductionOutcome run_reproduction(const std::string& figure, const ExperimentConfig& config,
                                     const std::filesystem::path& out_dir);

}  // namespace rmhe
