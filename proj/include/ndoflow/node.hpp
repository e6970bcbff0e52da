#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ndoflow/autodiff.hpp"
#include "ndoflow/odeint.hpp"
#include "ndoflow/optim.hpp"

namespace ndoflow::node {

enum class Activation { elu, tanh, relu };
std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// Pre-transform of the state before the network.
///   identity    the state itself
///   three_body  45 features from the 9 position components: r_1..r_3 and,
///               for the pairs (1,2), (1,3), (2,3) in that order,
///               d, d/|d|, d/|d|^2, d/|d|^3 with d = r_i - r_j.
///               Needs an 18-dim state; first-order fields also get the velocities.
enum class FeatureMap { identity, three_body };
std::string to_string(FeatureMap f);
FeatureMap parse_feature_map(const std::string& name);

struct FieldConfig {
  std::size_t state_dim = 2;
  std::vector<std::size_t> hidden = {20};
  Activation activation = Activation::elu;
  /// Append t as an extra network input.
  bool time_input = false;
  /// State is [x, x'] and the network only produces x''.
  bool second_order = false;
  FeatureMap features = FeatureMap::identity;

  void validate() const;
  std::size_t input_dim() const;
  std::size_t output_dim() const { return second_order ? state_dim / 2 : state_dim; }
  nlohmann::json to_json() const;
  static FieldConfig from_json(const nlohmann::json& j);
};

/// MLP vector field f(t, x) evaluated on an R x D batch of states.
class NodeModel {
 public:
  NodeModel() = default;
  NodeModel(FieldConfig cfg, std::uint64_t seed);

  const FieldConfig& config() const noexcept { return cfg_; }
  ad::ParameterSet& params() noexcept { return params_; }
  const ad::ParameterSet& params() const noexcept { return params_; }

  /// Field on the tape of `x` with parameter handles `p` (bound to that tape).
  ad::Var eval(const std::vector<ad::Var>& p, double t, const ad::Var& x) const;
  /// Binds every parameter to `tape` as a trainable leaf.
  std::vector<ad::Var> bind(ad::Tape& tape);
  /// Field values without gradients.
  ad::Tensor eval_values(double t, const ad::Tensor& x) const;

  /// VarField that uses `bound` on `tape` and constant copies of the
  /// parameters on any other tape (the solver's step-size probe).
  ode::VarField var_field(ad::Tape& tape, const std::vector<ad::Var>& bound) const;
  ode::Field field(std::size_t rows) const;

  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
  static NodeModel load(const std::filesystem::path& path);

 private:
  FieldConfig cfg_;
  ad::ParameterSet params_;
};

enum class Regularizer { none, ndo, rnode, steer };
std::string to_string(Regularizer r);
Regularizer parse_regularizer(const std::string& name);

struct TrainSpec {
  Regularizer regularizer = Regularizer::none;
  double lambda = 0.0;
  double steer_b = 0.0;
  std::size_t iterations = 2000;
  ad::OptimizerConfig optimizer;
  ad::LrSchedule schedule;
  ode::SolverConfig solver;
  std::uint64_t seed = 0;
  /// Abort once more than this fraction of iterations was skipped.
  double max_skip_fraction = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainSpec from_json(const nlohmann::json& j);
};

/// Observations of R trajectories on a shared grid.
struct TrainData {
  std::vector<double> times;
  /// observations[i] is R x |observed_dims|, the observed components at times[i].
  std::vector<ad::Tensor> observations;
  std::vector<std::size_t> observed_dims;
  /// Initial guess for the full R x D initial state; observed components are
  /// taken from observations[0], the others are trained.
  ad::Tensor initial_state;
  /// Derivative targets D_i (R x D) and the states at which f is compared
  /// against them (R x D); required by the ndo regularizer only.
  std::vector<ad::Tensor> derivative_targets;
  std::vector<ad::Tensor> penalty_states;

  std::size_t trajectories() const { return initial_state.rows(); }
  std::size_t state_dim() const { return initial_state.cols(); }
  void validate(const TrainSpec& spec) const;
};

struct LossTerms {
  ad::Var total;
  /// Mean squared trajectory error over points, trajectories and observed dims.
  double trajectory_mse = 0.0;
  double penalty = 0.0;
};

/// Trajectory loss (1/(N+1)) sum_i ||x'_i - x_i||^2 averaged over trajectories,
/// plus the regularizer: lambda sum_i ||D_i - f(X_i, t_i)||^2 (ndo) or
/// lambda sum_i ||f(X_i, t_i)||^2 (rnode), also averaged over trajectories.
/// `predictions` are the solver states at data.times (last one at `t_end`).
LossTerms loss(const NodeModel& model, const std::vector<ad::Var>& bound, const std::vector<ad::Var>& predictions,
               const TrainData& data, const TrainSpec& spec);

struct TrainCurvePoint {
  std::size_t iteration = 0;
  double loss = 0.0;
  double trajectory_mse = 0.0;
  bool skipped = false;
};

struct TrainResult {
  std::vector<TrainCurvePoint> curve;
  /// Learned full initial state, R x D.
  ad::Tensor initial_state;
  std::size_t skipped = 0;
  double seconds = 0.0;
};

/// Trains `model` in place. Solver failures skip the iteration; exceeding
/// spec.max_skip_fraction aborts with an Error.
TrainResult train(NodeModel& model, const TrainData& data, const TrainSpec& spec);

/// States at `query_times`, integrating the R x D batch `x0` from t0 without a tape.
std::vector<ad::Tensor> predict(const NodeModel& model, const ad::Tensor& x0, double t0,
                                std::span<const double> query_times, const ode::SolverConfig& solver);

struct EvalResult {
  double in_mse = 0.0;
  double ex_mse = 0.0;
};

/// Mean squared error over points and the given dims (all when empty).
double mse(const ode::Trajectory& pred, const ode::Trajectory& truth, std::span<const std::size_t> dims = {});

/// MSE on points with t <= split_time (in) and t > split_time (ex); a point at
/// exactly split_time counts as interpolation.
EvalResult evaluate(const ode::Trajectory& pred, const ode::Trajectory& truth, double split_time,
                    std::span<const std::size_t> dims = {});

}  // namespace ndoflow::node
