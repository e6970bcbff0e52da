#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "ndoflow/autodiff.hpp"
#include "ndoflow/funclib.hpp"

namespace ndoflow::ndo {

/// Bidirectional LSTM backbone followed by a pointwise ReLU MLP head.
struct Architecture {
  int order = 1;
  std::size_t channels = 1;
  /// Units per direction in every LSTM layer.
  std::size_t hidden = 64;
  std::size_t layers = 2;
  /// Hidden widths of the head; the output layer has `channels` units.
  std::vector<std::size_t> head = {64, 32};
  /// Per-sequence, per-channel amplitude normalisation of the state inputs.
  bool normalize = true;
  /// Lower bound on the normalisation scale.
  double scale_floor = 1e-3;

  void validate() const;
  std::size_t input_features() const { return funclib::feature_count(order, channels); }
  nlohmann::json to_json() const;
  static Architecture from_json(const nlohmann::json& j);
};

/// Per-sequence affine map applied to the state channels.
struct Scaling {
  std::vector<double> shift;
  std::vector<double> scale;
};

/// Normalises the state columns of an L x F feature matrix in place and returns
/// the map used. Order-2 first-derivative columns are scaled but not shifted.
Scaling normalize_features(const Architecture& arch, ad::Tensor& features);

class NdoModel {
 public:
  NdoModel() = default;
  NdoModel(Architecture arch, std::uint64_t seed);

  const Architecture& arch() const noexcept { return arch_; }
  int order() const noexcept { return arch_.order; }
  std::size_t channels() const noexcept { return arch_.channels; }
  ad::ParameterSet& params() noexcept { return params_; }
  const ad::ParameterSet& params() const noexcept { return params_; }
  nlohmann::json& metadata() noexcept { return metadata_; }
  const nlohmann::json& metadata() const noexcept { return metadata_; }

  /// Raw network on a time-major batch: `features` is (L*B) x F already
  /// normalised, result is (L*B) x channels. Parameters are bound to `tape`.
  ad::Var forward(ad::Tape& tape, const ad::Var& features, std::size_t batch);

  /// Network output for equal-length sequences (each L x F, unnormalised
  /// features), mapped back to physical units. Does not touch parameters.
  std::vector<ad::Tensor> apply(const std::vector<ad::Tensor>& features) const;
  ad::Tensor apply(const ad::Tensor& features) const;

  /// Same network as forward() evaluated without gradients.
  ad::Tensor forward_values(const ad::Tensor& features, std::size_t batch) const;

  void save(const std::filesystem::path& path) const;
  static NdoModel load(const std::filesystem::path& path);

 private:
  Architecture arch_;
  ad::ParameterSet params_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

struct TrainConfig {
  std::size_t iterations = 20000;
  std::size_t batch_size = 16;
  double lr = 0.003;
  double lr_min = 0.0;
  /// Fraction of the dataset held out for validation.
  double validation_fraction = 0.1;
  /// Validation cadence in iterations; 0 means once per epoch.
  std::size_t eval_every = 0;
  std::uint64_t seed = 0;
  std::optional<double> max_grad_norm;
  /// Divide each example's squared error by the mean square of its labels, so
  /// high-frequency examples do not dominate. JSON "loss": "mse" | "relative".
  bool relative_loss = false;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct CurvePoint {
  std::size_t iteration = 0;
  double epoch = 0.0;
  double train_loss = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  NdoModel model;
  std::vector<CurvePoint> curve;
  double seconds = 0.0;
};

/// Raised when training produces a non-finite loss. `last_good` holds the
/// parameters from the most recent finite validation point.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, NdoModel last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const NdoModel& last_good() const noexcept { return last_good_; }

 private:
  NdoModel last_good_;
};

using ProgressFn = std::function<void(const CurvePoint&)>;

/// Minibatch Adam on mean squared error in normalised units (optionally relative
/// per example), cosine-annealed. Validation error is always plain normalised MSE.
TrainResult train_ndo(const funclib::Dataset& data, const Architecture& arch, const TrainConfig& cfg,
                      const ProgressFn& progress = {});

/// Mean squared error of the model over a set of examples, in physical units.
double dataset_mse(const NdoModel& model, std::span<const funclib::Example> examples);

/// Derivative estimates for states `x` (L x D) observed at `times`. D must be
/// a multiple of the model's channel count; consecutive groups of that many
/// columns are estimated together. Time is shifted to start at zero and
/// scaled by 1/t_N, and the output is rescaled by the chain rule. Order-2
/// models need `first_derivatives` (L x D) in the original time units.
ad::Tensor estimate(const NdoModel& model, std::span<const double> times, const ad::Tensor& x,
                    const ad::Tensor* first_derivatives = nullptr);

struct ChainEstimate {
  ad::Tensor d1;
  ad::Tensor d2;
};

/// First derivatives from an order-1 model, then second derivatives from an
/// order-2 model fed with those estimates.
ChainEstimate estimate_chain(const NdoModel& first, const NdoModel& second, std::span<const double> times,
                             const ad::Tensor& x);

/// estimate() applied to consecutive windows of `segment_len` points, each
/// standardised on its own. The final window may be shorter but needs >= 2 points.
ad::Tensor segment_estimate(const NdoModel& model, std::span<const double> times, const ad::Tensor& x,
                            std::size_t segment_len, const ad::Tensor* first_derivatives = nullptr);

}  // namespace ndoflow::ndo
