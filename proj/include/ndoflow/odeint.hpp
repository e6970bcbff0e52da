#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ndoflow/autodiff.hpp"

namespace ndoflow::ode {

enum class Method { rk4, dopri5 };

std::string to_string(Method method);
Method parse_method(const std::string& name);

struct SolverConfig {
  Method method = Method::dopri5;
  double rtol = 1e-6;
  double atol = 1e-8;
  /// First trial step for dopri5; 0 selects it automatically.
  double initial_step = 0.0;
  /// Fixed step for rk4 (intervals between query times are subdivided evenly).
  double step_size = 0.0;
  std::size_t max_steps = 100000;
  double safety = 0.9;
  double min_scale = 0.2;
  double max_scale = 5.0;

  void validate() const;
};

/// Time-stamped sequence of D-dimensional states stored row-major.
class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(std::size_t dim);
  Trajectory(std::vector<double> times, std::vector<double> values, std::size_t dim);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return times_.size(); }
  bool empty() const noexcept { return times_.empty(); }

  const std::vector<double>& times() const noexcept { return times_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& mutable_values() noexcept { return values_; }
  double time(std::size_t i) const { return times_[i]; }
  std::span<const double> state(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::span<double> state(std::size_t i) { return {values_.data() + i * dim_, dim_}; }
  double at(std::size_t i, std::size_t d) const { return values_[i * dim_ + d]; }

  /// Values of one component over time.
  std::vector<double> component(std::size_t d) const;

  void push_back(double t, std::span<const double> state);

  /// Throws when times are not strictly increasing or a state is non-finite.
  void validate() const;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> times_;
  std::vector<double> values_;
};

/// Raised on max_steps exhaustion, step underflow, or persistent non-finite
/// field output. `time()` is where the solver stopped.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double time);
  double time() const noexcept { return time_; }

 private:
  double time_;
};

struct SolveStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t evaluations = 0;
};

using Field = std::function<void(double t, std::span<const double> x, std::span<double> dxdt)>;

/// States at exactly `query_times` (sorted, all >= t0).
Trajectory integrate(const Field& field, std::span<const double> x0, double t0,
                     std::span<const double> query_times, const SolverConfig& cfg,
                     SolveStats* stats = nullptr);

/// Ground-truth generator: dopri5 at rtol=1e-10, atol=1e-12.
Trajectory reference_solve(const Field& field, std::span<const double> x0, double t0,
                           std::span<const double> query_times);
SolverConfig reference_config();

/// Field over tape values. `x` is an R x D batch of states. The solver may
/// call it on a scratch tape, so constants must be created on `x.tape()`.
using VarField = std::function<ad::Var(double t, const ad::Var& x)>;

/// Differentiable solve: every accepted stage is recorded on the tape of `x0`
/// so that gradients flow back through the discrete solver steps. Returns the
/// state batch at each query time.
std::vector<ad::Var> integrate_with_grad(const VarField& field, const ad::Var& x0, double t0,
                                         std::span<const double> query_times, const SolverConfig& cfg,
                                         SolveStats* stats = nullptr);

}  // namespace ndoflow::ode
