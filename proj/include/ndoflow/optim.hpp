#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ndoflow/autodiff.hpp"

namespace ndoflow::ad {

enum class OptimizerKind { adam, rmsprop, sgd };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Smoothing constant of the RMSprop square average.
  double alpha = 0.99;
  /// Optional global gradient-norm clip; off when unset.
  std::optional<double> max_grad_norm;
};

/// Per-parameter moment buffers and the step counter for one optimizer run.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  /// Applies one update from the gradients stored in `params` using `lr`.
  /// Throws NumericError and leaves everything untouched on a non-finite gradient.
  void step(ParameterSet& params, double lr);
  void step(ParameterSet& params) { step(params, config_.lr); }

  const OptimizerConfig& config() const noexcept { return config_; }
  std::size_t step_count() const noexcept { return steps_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  void ensure_buffers(const ParameterSet& params);

  OptimizerConfig config_;
  std::size_t steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

enum class ScheduleKind { constant, cosine, exponential };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

/// Learning rate as a function of the step index.
///   cosine:      lr_min + (lr - lr_min) * (1 + cos(pi * t / t_max)) / 2
///   exponential: lr * gamma^t
struct LrSchedule {
  ScheduleKind kind = ScheduleKind::constant;
  double lr = 1e-3;
  double lr_min = 0.0;
  std::size_t t_max = 1;
  double gamma = 1.0;

  double rate(std::size_t step) const;
};

}  // namespace ndoflow::ad
