#include "ndoflow/optim.hpp"

#include <cmath>
#include <numbers>

namespace ndoflow::ad {

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::rmsprop: return "rmsprop";
    case OptimizerKind::sgd: return "sgd";
  }
  return "?";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  if (name == "sgd") return OptimizerKind::sgd;
  throw Error("unknown optimizer '" + name + "'");
}

Optimizer::Optimizer(OptimizerConfig config) : config_(std::move(config)) {}

void Optimizer::ensure_buffers(const ParameterSet& params) {
  if (m_.size() == params.size()) return;
  m_.clear();
  v_.clear();
  for (const auto& p : params) {
    m_.emplace_back(p.value().shape(), 0.0);
    v_.emplace_back(p.value().shape(), 0.0);
  }
}

void Optimizer::step(ParameterSet& params, double lr) {
  for (const auto& p : params) {
    if (!p.grad().all_finite()) {
      throw NumericError("non-finite gradient for parameter '" + p.name() + "' at optimizer step " +
                         std::to_string(steps_ + 1));
    }
  }
  ensure_buffers(params);

  double clip = 1.0;
  if (config_.max_grad_norm) {
    const double norm = params.grad_norm();
    if (norm > *config_.max_grad_norm) clip = *config_.max_grad_norm / norm;
  }

  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, double(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, double(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& w = params[k].value();
    const Tensor& g = params[k].grad();
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double gi = g[i] * clip;
      switch (config_.kind) {
        case OptimizerKind::sgd:
          w[i] -= lr * gi;
          break;
        case OptimizerKind::rmsprop:
          v[i] = config_.alpha * v[i] + (1.0 - config_.alpha) * gi * gi;
          w[i] -= lr * gi / (std::sqrt(v[i]) + config_.eps);
          break;
        case OptimizerKind::adam:
          m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
          v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
          w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
          break;
      }
    }
  }
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::exponential: return "exponential";
  }
  return "?";
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "constant") return ScheduleKind::constant;
  if (name == "cosine") return ScheduleKind::cosine;
  if (name == "exponential") return ScheduleKind::exponential;
  throw Error("unknown learning-rate schedule '" + name + "'");
}

double LrSchedule::rate(std::size_t step) const {
  switch (kind) {
    case ScheduleKind::constant:
      return lr;
    case ScheduleKind::cosine: {
      const double t = double(std::min(step, t_max));
      return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(std::numbers::pi * t / double(t_max)));
    }
    case ScheduleKind::exponential:
      return lr * std::pow(gamma, double(step));
  }
  return lr;
}

}  // namespace ndoflow::ad
