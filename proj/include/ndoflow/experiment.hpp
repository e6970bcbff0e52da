#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ndoflow/dynamics.hpp"
#include "ndoflow/funclib.hpp"
#include "ndoflow/ndo.hpp"
#include "ndoflow/node.hpp"

namespace ndoflow::harness {

/// How to obtain one NDO: a checkpoint, or a library to pretrain on.
struct NdoSpec {
  int order = 1;
  funclib::LibraryConfig library;
  ndo::Architecture arch;
  ndo::TrainConfig train;
  std::optional<std::filesystem::path> checkpoint;

  /// Canonical description of the training job; checkpoint paths excluded.
  nlohmann::json training_json() const;
  static NdoSpec from_json(const nlohmann::json& j, int order);
};

using LogFn = std::function<void(const std::string&)>;

/// Loads `spec.checkpoint`, or a cached model trained from the same
/// training_json(), or trains one and stores it under `cache_dir`.
ndo::NdoModel obtain_ndo(const NdoSpec& spec, const std::filesystem::path& cache_dir, const LogFn& log = {});

/// Path of the cache entry for a training job.
std::filesystem::path ndo_cache_path(const NdoSpec& spec, const std::filesystem::path& cache_dir);

struct MethodSpec {
  /// Label in the metrics table: node, rnode, steer, ndo-node, ...
  std::string name;
  node::Regularizer regularizer = node::Regularizer::none;
  /// One value for every noise level, or one per entry of ExperimentSpec::sigmas.
  std::vector<double> lambda = {0.0};
  double steer_b = 0.0;
  /// Overrides merged into the experiment's TrainSpec JSON.
  nlohmann::json train = nlohmann::json::object();

  double lambda_at(std::size_t sigma_index) const;
  static MethodSpec from_json(const std::string& name, const nlohmann::json& j);
};

struct ExperimentSpec {
  std::string name = "experiment";
  dynamics::SystemSpec system;
  std::vector<double> sigmas = {0.0};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  node::FieldConfig field;
  /// Shared training settings as JSON (TrainSpec schema); methods patch it.
  nlohmann::json train = nlohmann::json::object();
  std::vector<MethodSpec> methods;
  std::optional<NdoSpec> ndo1;
  std::optional<NdoSpec> ndo2;
  /// Window length for NDO inference on long series; 0 uses the whole series.
  std::size_t segment_len = 0;
  /// Solver used for evaluation predictions.
  ode::SolverConfig eval_solver;
  /// Raw document, kept for the ablations.
  nlohmann::json raw = nlohmann::json::object();

  bool needs_ndo() const;
  node::TrainSpec train_spec(const MethodSpec& method, std::size_t sigma_index, std::uint64_t seed) const;
  static ExperimentSpec from_json(const nlohmann::json& j);
};

struct MetricsRow {
  std::string method;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  double in_mse = 0.0;
  double ex_mse = 0.0;
  double wall_time_s = 0.0;
};

struct RunOptions {
  std::filesystem::path out_dir = "out";
  std::filesystem::path cache_dir = ".ndoflow-cache";
  /// Record wall-clock seconds; otherwise wall_time_s is 0 so output is reproducible.
  bool timing = false;
  std::size_t workers = 1;
  /// Write predictions and loss curves per cell.
  bool artifacts = true;
  LogFn log;
};

/// Observations, derivative estimates and the NODE training inputs for one
/// (noise level, seed) pair. Shared by every method of that pair.
struct CellData {
  std::vector<double> times;
  /// Clean and noisy trajectories, one per initial state.
  std::vector<std::vector<double>> true_initial_states;
  std::vector<ode::Trajectory> noisy;
  /// Derivative estimates at the training times, R x D per time (empty without NDOs).
  std::vector<ad::Tensor> ndo_targets;
  /// States at which the regularizer evaluates the field, from NDO estimates
  /// and from finite differences respectively.
  std::vector<ad::Tensor> ndo_states;
  std::vector<ad::Tensor> difference_states;
};

struct NdoModels {
  const ndo::NdoModel* first = nullptr;
  const ndo::NdoModel* second = nullptr;
};

CellData make_cell_data(const ExperimentSpec& spec, double sigma, std::uint64_t seed, const NdoModels& ndos);

/// Assembles node::TrainData for one method.
node::TrainData make_train_data(const ExperimentSpec& spec, const CellData& cell, const MethodSpec& method);

struct CellResult {
  MetricsRow row;
  node::TrainResult train;
  /// Prediction and truth of the first trajectory on the interpolation and
  /// extrapolation grids.
  ode::Trajectory pred_in, pred_ex, truth_in, truth_ex;
};

/// Trains and evaluates one method on one (noise level, seed) pair.
CellResult run_cell(const ExperimentSpec& spec, const MethodSpec& method, std::size_t sigma_index,
                    std::uint64_t seed, const CellData& cell);

struct SummaryRow {
  std::string method;
  double sigma = 0.0;
  std::size_t runs = 0;
  double in_mean = 0.0, in_std = 0.0, ex_mean = 0.0, ex_std = 0.0;
};

/// Mean and population standard deviation per (method, sigma) in first-seen order.
std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows);

std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string summary_csv(const std::vector<SummaryRow>& rows);
std::string summary_table(const std::vector<SummaryRow>& rows);

/// Full protocol: NDOs, then every (sigma, seed, method) cell, then aggregation.
/// Writes metrics.csv, summary.csv, summary.txt and per-cell artifacts to
/// options.out_dir. Failed cells are logged to failures.csv and skipped.
std::vector<MetricsRow> run_experiment(const ExperimentSpec& spec, const RunOptions& options);

struct LambdaSweepRow {
  double sigma = 0.0;
  double lambda = 0.0;
  double in_ratio = 0.0;
  double ex_ratio = 0.0;
};

/// NDO-NODE over the grid `lambdas` against vanilla NODE, per noise level.
/// Ratios compare means over seeds. Writes lambda_sweep.csv.
std::vector<LambdaSweepRow> run_lambda_sweep(const ExperimentSpec& spec, const std::vector<double>& lambdas,
                                             const RunOptions& options);

struct LibraryRow {
  int trig_bound = 0;
  double mse = 0.0;
};

struct LibraryAblation {
  NdoSpec base;
  std::vector<int> trig_bounds = {0, 5, 20, 50};
  funclib::SymbolicFunction probe;
  std::vector<double> probe_times;

  static LibraryAblation from_json(const nlohmann::json& j);
};

/// Pretrains one order-1 NDO per trig bound and reports the estimation MSE
/// of the probe's derivative. Writes library_complexity.csv and the estimates.
std::vector<LibraryRow> run_library_ablation(const LibraryAblation& spec, const RunOptions& options);

/// Central finite differences on a non-uniform grid, one-sided at the ends.
std::vector<double> finite_difference(std::span<const double> times, std::span<const double> values);

/// Worker count from NDOFLOW_WORKERS, defaulting to 1.
std::size_t workers_from_env();

}  // namespace ndoflow::harness
