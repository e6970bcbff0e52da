#include "ndoflow/ndo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ndoflow/checkpoint.hpp"
#include "ndoflow/lstm.hpp"
#include "ndoflow/ops.hpp"
#include "ndoflow/optim.hpp"

namespace ndoflow::ndo {

using ad::Tensor;
using ad::Var;

void Architecture::validate() const {
  if (order != 1 && order != 2) throw Error("NDO order must be 1 or 2");
  if (channels == 0) throw Error("NDO needs at least one channel");
  if (hidden == 0 || layers == 0) throw Error("NDO backbone needs hidden units and layers");
  for (auto w : head) {
    if (w == 0) throw Error("NDO head widths must be positive");
  }
  if (!(scale_floor > 0.0)) throw Error("NDO scale_floor must be positive");
}

nlohmann::json Architecture::to_json() const {
  return {{"order", order}, {"channels", channels}, {"hidden", hidden},           {"layers", layers},
          {"head", head},   {"normalize", normalize}, {"scale_floor", scale_floor}};
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  Architecture a;
  a.order = j.value("order", a.order);
  a.channels = j.value("channels", a.channels);
  a.hidden = j.value("hidden", a.hidden);
  a.layers = j.value("layers", a.layers);
  a.head = j.value("head", a.head);
  a.normalize = j.value("normalize", a.normalize);
  a.scale_floor = j.value("scale_floor", a.scale_floor);
  a.validate();
  return a;
}

Scaling normalize_features(const Architecture& arch, Tensor& features) {
  const std::size_t c = arch.channels;
  const std::size_t L = features.rows();
  if (features.cols() != arch.input_features()) throw ShapeError("NDO features have the wrong width");
  Scaling s{std::vector<double>(c, 0.0), std::vector<double>(c, 1.0)};
  if (!arch.normalize) return s;
  const std::size_t xcol = arch.order == 2 ? c : 0;
  for (std::size_t k = 0; k < c; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < L; ++i) mean += features.at(i, xcol + k);
    mean /= double(L);
    double var = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      const double d = features.at(i, xcol + k) - mean;
      var += d * d;
    }
    const double scale = std::max(std::sqrt(var / double(L)), arch.scale_floor);
    s.shift[k] = mean;
    s.scale[k] = scale;
    for (std::size_t i = 0; i < L; ++i) {
      features.at(i, xcol + k) = (features.at(i, xcol + k) - mean) / scale;
      if (arch.order == 2) features.at(i, k) /= scale;
    }
  }
  return s;
}

namespace {

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.values()) v = u(rng);
  return t;
}

Var network(const Architecture& arch, const std::vector<Var>& p, const Var& features, std::size_t batch) {
  Var x = features;
  std::size_t k = 0;
  for (std::size_t l = 0; l < arch.layers; ++l) {
    Var fwd = ad::lstm_layer(x, batch, p[k], p[k + 1], p[k + 2], false);
    Var bwd = ad::lstm_layer(x, batch, p[k + 3], p[k + 4], p[k + 5], true);
    k += 6;
    x = ad::concat_cols({fwd, bwd});
  }
  for (std::size_t h = 0; h < arch.head.size(); ++h, k += 2) x = ad::relu(ad::affine(x, p[k], p[k + 1]));
  return ad::affine(x, p[k], p[k + 1]);
}

/// Stacks equal-length sequences into a time-major (L*B) x C matrix.
Tensor time_major(const std::vector<const Tensor*>& seqs) {
  const std::size_t B = seqs.size();
  const std::size_t L = seqs.front()->rows();
  const std::size_t C = seqs.front()->cols();
  Tensor out = Tensor::zeros(L * B, C);
  for (std::size_t b = 0; b < B; ++b) {
    if (seqs[b]->rows() != L || seqs[b]->cols() != C) throw ShapeError("NDO batch sequences differ in shape");
    for (std::size_t t = 0; t < L; ++t) {
      std::copy_n(seqs[b]->data() + t * C, C, out.data() + (t * B + b) * C);
    }
  }
  return out;
}

Tensor sequence_of(const Tensor& batch_out, std::size_t B, std::size_t b) {
  const std::size_t L = batch_out.rows() / B;
  const std::size_t C = batch_out.cols();
  Tensor out = Tensor::zeros(L, C);
  for (std::size_t t = 0; t < L; ++t) std::copy_n(batch_out.data() + (t * B + b) * C, C, out.data() + t * C);
  return out;
}

constexpr std::size_t kInferenceBatch = 64;

}  // namespace

NdoModel::NdoModel(Architecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
  arch_.validate();
  Rng rng(seed);
  const std::size_t H = arch_.hidden;
  std::size_t in = arch_.input_features();
  const double kl = 1.0 / std::sqrt(double(H));
  for (std::size_t l = 0; l < arch_.layers; ++l) {
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string base = "lstm" + std::to_string(l) + "." + dir + ".";
      params_.add(base + "w_ih", uniform_tensor(in, 4 * H, kl, rng));
      params_.add(base + "w_hh", uniform_tensor(H, 4 * H, kl, rng));
      params_.add(base + "bias", uniform_tensor(1, 4 * H, kl, rng));
    }
    in = 2 * H;
  }
  std::vector<std::size_t> widths = arch_.head;
  widths.push_back(arch_.channels);
  for (std::size_t h = 0; h < widths.size(); ++h) {
    const double k = 1.0 / std::sqrt(double(in));
    const std::string base = "head" + std::to_string(h) + ".";
    params_.add(base + "weight", uniform_tensor(in, widths[h], k, rng));
    params_.add(base + "bias", uniform_tensor(1, widths[h], k, rng));
    in = widths[h];
  }
  metadata_["init"] = {{"seed", seed}, {"rule", "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); LSTM fan_in = hidden"}};
}

Var NdoModel::forward(ad::Tape& tape, const Var& features, std::size_t batch) {
  std::vector<Var> p;
  p.reserve(params_.size());
  for (auto& param : params_) p.push_back(tape.param(param));
  return network(arch_, p, features, batch);
}

Tensor NdoModel::forward_values(const Tensor& features, std::size_t batch) const {
  ad::Tape tape;
  std::vector<Var> p;
  p.reserve(params_.size());
  for (const auto& param : params_) p.push_back(tape.constant(param.value()));
  return network(arch_, p, tape.constant(features), batch).value();
}

std::vector<Tensor> NdoModel::apply(const std::vector<Tensor>& features) const {
  std::vector<Tensor> out;
  out.reserve(features.size());
  for (std::size_t begin = 0; begin < features.size(); begin += kInferenceBatch) {
    const std::size_t end = std::min(features.size(), begin + kInferenceBatch);
    std::vector<Tensor> normed(features.begin() + std::ptrdiff_t(begin), features.begin() + std::ptrdiff_t(end));
    std::vector<Scaling> scalings;
    std::vector<const Tensor*> ptrs;
    for (auto& f : normed) {
      scalings.push_back(normalize_features(arch_, f));
      ptrs.push_back(&f);
    }
    const std::size_t B = normed.size();
    const Tensor y = forward_values(time_major(ptrs), B);
    for (std::size_t b = 0; b < B; ++b) {
      Tensor seq = sequence_of(y, B, b);
      for (std::size_t t = 0; t < seq.rows(); ++t) {
        for (std::size_t k = 0; k < seq.cols(); ++k) seq.at(t, k) *= scalings[b].scale[k];
      }
      out.push_back(std::move(seq));
    }
  }
  return out;
}

Tensor NdoModel::apply(const Tensor& features) const { return apply(std::vector<Tensor>{features}).front(); }

void NdoModel::save(const std::filesystem::path& path) const {
  nlohmann::json meta = metadata_;
  meta["architecture"] = arch_.to_json();
  ad::save_checkpoint(path, params_, meta);
}

NdoModel NdoModel::load(const std::filesystem::path& path) {
  ad::Checkpoint ck = ad::load_checkpoint(path);
  if (!ck.metadata.contains("architecture")) throw Error("checkpoint has no NDO architecture: " + path.string());
  NdoModel m(Architecture::from_json(ck.metadata.at("architecture")), 0);
  if (m.params_.size() != ck.params.size()) throw Error("checkpoint does not match its architecture: " + path.string());
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    if (ck.params[i].name() != m.params_[i].name() || !ck.params[i].value().same_shape(m.params_[i].value())) {
      throw Error("checkpoint parameter mismatch at " + ck.params[i].name());
    }
    m.params_[i].value() = ck.params[i].value();
  }
  m.metadata_ = std::move(ck.metadata);
  return m;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw Error("NDO batch_size must be positive");
  if (!(lr > 0.0) || lr_min < 0.0 || lr_min > lr) throw Error("NDO learning rates must satisfy 0 <= lr_min <= lr");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw Error("validation_fraction must lie in (0, 1)");
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"iterations", iterations}, {"batch_size", batch_size},
                      {"lr", lr},                 {"lr_min", lr_min},
                      {"validation_fraction", validation_fraction},
                      {"eval_every", eval_every}, {"seed", seed}};
  if (max_grad_norm) j["max_grad_norm"] = *max_grad_norm;
  if (relative_loss) j["loss"] = "relative";
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.seed = j.value("seed", c.seed);
  if (j.contains("max_grad_norm") && !j.at("max_grad_norm").is_null()) c.max_grad_norm = j.at("max_grad_norm").get<double>();
  const std::string loss = j.value("loss", std::string("mse"));
  if (loss != "mse" && loss != "relative") throw Error("NDO loss must be 'mse' or 'relative', got '" + loss + "'");
  c.relative_loss = loss == "relative";
  c.validate();
  return c;
}

namespace {

struct Prepared {
  Tensor inputs;
  Tensor labels;
  /// 1 / sqrt(mean square of the normalised labels), floored.
  double rel_weight = 1.0;
};

Prepared prepare(const Architecture& arch, const funclib::Example& ex) {
  Prepared p{ex.inputs, ex.labels};
  const Scaling s = normalize_features(arch, p.inputs);
  for (std::size_t t = 0; t < p.labels.rows(); ++t) {
    for (std::size_t k = 0; k < p.labels.cols(); ++k) p.labels.at(t, k) /= s.scale[k];
  }
  const double ms = p.labels.matrix().squaredNorm() / double(std::max<std::size_t>(p.labels.numel(), 1));
  p.rel_weight = 1.0 / std::sqrt(std::max(ms, 1e-12));
  return p;
}

double normalized_mse(const NdoModel& model, const std::vector<Prepared>& set) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < set.size(); begin += kInferenceBatch) {
    const std::size_t end = std::min(set.size(), begin + kInferenceBatch);
    std::vector<const Tensor*> in, lab;
    for (std::size_t i = begin; i < end; ++i) {
      in.push_back(&set[i].inputs);
      lab.push_back(&set[i].labels);
    }
    const Tensor y = model.forward_values(time_major(in), in.size());
    const Tensor target = time_major(lab);
    total += (y.matrix() - target.matrix()).squaredNorm();
    count += y.numel();
  }
  return total / double(count);
}

}  // namespace

TrainResult train_ndo(const funclib::Dataset& data, const Architecture& arch, const TrainConfig& cfg,
                      const ProgressFn& progress) {
  arch.validate();
  cfg.validate();
  if (data.order != arch.order) throw Error("dataset order does not match the NDO order");
  if (data.channels != arch.channels) throw Error("dataset channel count does not match the NDO");
  const std::size_t n = data.examples.size();
  const std::size_t n_val = std::max<std::size_t>(1, std::size_t(std::round(cfg.validation_fraction * double(n))));
  if (n <= n_val || n - n_val < cfg.batch_size) throw Error("dataset too small for the requested batch size");
  const std::size_t n_train = n - n_val;

  std::vector<Prepared> train, val;
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? train : val).push_back(prepare(arch, data.examples[i]));

  const auto start = std::chrono::steady_clock::now();
  TrainResult result{NdoModel(arch, derive_seed(cfg.seed, 0)), {}, 0.0};
  NdoModel& model = result.model;
  model.metadata()["train"] = cfg.to_json();

  ad::OptimizerConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.max_grad_norm = cfg.max_grad_norm;
  ad::Optimizer opt(ocfg);
  const ad::LrSchedule schedule{ad::ScheduleKind::cosine, cfg.lr, cfg.lr_min, std::max<std::size_t>(cfg.iterations, 1), 1.0};

  const std::size_t per_epoch = n_train / cfg.batch_size;
  const std::size_t eval_every = cfg.eval_every > 0 ? cfg.eval_every : per_epoch;
  std::vector<std::size_t> order(n_train);
  std::size_t epoch = 0, cursor = per_epoch;
  std::vector<double> last_good = model.params().flat_values();
  double loss_sum = 0.0;
  std::size_t loss_count = 0;

  auto diverged = [&](const std::string& why) {
    model.params().assign_flat_values(last_good);
    return TrainingDiverged("NDO training diverged: " + why, model);
  };

  ad::Tape tape;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    if (cursor == per_epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(cfg.seed, 1 + epoch));
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
      ++epoch;
    }
    std::vector<const Tensor*> in, lab;
    std::vector<double> weights;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto& ex = train[order[cursor * cfg.batch_size + b]];
      in.push_back(&ex.inputs);
      lab.push_back(&ex.labels);
      weights.push_back(ex.rel_weight);
    }
    ++cursor;

    double loss_value;
    try {
      tape.clear();
      model.params().zero_grad();
      Var y = model.forward(tape, tape.constant(time_major(in)), cfg.batch_size);
      Var diff = ad::sub(y, tape.constant(time_major(lab)));
      if (cfg.relative_loss) {
        Tensor w(diff.value().shape());
        for (std::size_t r = 0; r < w.rows(); ++r) {
          for (std::size_t k = 0; k < w.cols(); ++k) w.at(r, k) = weights[r % cfg.batch_size];
        }
        diff = ad::mul(diff, tape.constant(w));
      }
      Var loss = ad::scale(ad::sum_squares(diff), 1.0 / double(diff.value().numel()));
      loss_value = loss.value().item();
      tape.backward(loss);
      opt.step(model.params(), schedule.rate(it));
    } catch (const NumericError& e) {
      throw diverged(e.what());
    }
    loss_sum += loss_value;
    ++loss_count;

    if ((it + 1) % eval_every == 0 || it + 1 == cfg.iterations) {
      CurvePoint pt;
      pt.iteration = it + 1;
      pt.epoch = double(it + 1) / double(per_epoch);
      pt.train_loss = loss_sum / double(loss_count);
      pt.val_mse = normalized_mse(model, val);
      if (!std::isfinite(pt.val_mse) || !std::isfinite(pt.train_loss)) throw diverged("non-finite validation error");
      last_good = model.params().flat_values();
      loss_sum = 0.0;
      loss_count = 0;
      result.curve.push_back(pt);
      if (progress) progress(pt);
    }
  }
  tape.clear();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  model.metadata()["train_seconds"] = result.seconds;
  if (!result.curve.empty()) model.metadata()["final_val_mse"] = result.curve.back().val_mse;
  return result;
}

double dataset_mse(const NdoModel& model, std::span<const funclib::Example> examples) {
  if (examples.empty()) throw Error("dataset_mse needs at least one example");
  std::vector<Tensor> inputs;
  for (const auto& ex : examples) inputs.push_back(ex.inputs);
  const auto outputs = model.apply(inputs);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    total += (outputs[i].matrix() - examples[i].labels.matrix()).squaredNorm();
    count += outputs[i].numel();
  }
  return total / double(count);
}

namespace {

void check_times(std::span<const double> times, std::size_t rows) {
  if (times.size() < 2) throw Error("derivative estimation needs at least 2 time points");
  if (rows != times.size()) throw ShapeError("state rows do not match the number of time points");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw Error("times must be strictly increasing");
  }
}

}  // namespace

Tensor estimate(const NdoModel& model, std::span<const double> times, const Tensor& x, const Tensor* first) {
  check_times(times, x.rows());
  const std::size_t L = x.rows(), D = x.cols(), c = model.channels();
  if (D % c != 0) throw ShapeError("state width is not a multiple of the NDO channel count");
  if (model.order() == 2) {
    if (first == nullptr) throw Error("an order-2 NDO needs first-derivative inputs");
    if (!first->same_shape(x) && !(first->rows() == L && first->cols() == D)) {
      throw ShapeError("first-derivative inputs do not match the states");
    }
  }
  const double t0 = times.front();
  const double tau = times.back() - t0;
  std::vector<double> st(L);
  for (std::size_t i = 0; i < L; ++i) st[i] = (times[i] - t0) / tau;

  std::vector<Tensor> features;
  for (std::size_t g = 0; g < D / c; ++g) {
    std::vector<double> values(L * c), d1;
    if (model.order() == 2) d1.resize(L * c);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t k = 0; k < c; ++k) {
        values[i * c + k] = x.at(i, g * c + k);
        if (model.order() == 2) d1[i * c + k] = first->at(i, g * c + k) * tau;
      }
    }
    features.push_back(funclib::build_inputs(model.order(), c, st, values, d1));
  }
  const auto out = model.apply(features);
  const double factor = model.order() == 2 ? 1.0 / (tau * tau) : 1.0 / tau;
  Tensor d = Tensor::zeros(L, D);
  for (std::size_t g = 0; g < D / c; ++g) {
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t k = 0; k < c; ++k) d.at(i, g * c + k) = out[g].at(i, k) * factor;
    }
  }
  return d;
}

ChainEstimate estimate_chain(const NdoModel& first, const NdoModel& second, std::span<const double> times,
                             const Tensor& x) {
  if (first.order() != 1) throw Error("estimate_chain: first model must be order 1");
  if (second.order() != 2) throw Error("estimate_chain: second model must be order 2");
  if (first.channels() != second.channels()) throw Error("estimate_chain: models differ in channel count");
  ChainEstimate out;
  out.d1 = estimate(first, times, x);
  out.d2 = estimate(second, times, x, &out.d1);
  return out;
}

Tensor segment_estimate(const NdoModel& model, std::span<const double> times, const Tensor& x,
                        std::size_t segment_len, const Tensor* first) {
  check_times(times, x.rows());
  if (segment_len < 2) throw Error("segment length must be at least 2");
  const std::size_t L = times.size();
  if (L % segment_len == 1) throw Error("final segment would hold a single point");
  Tensor d = Tensor::zeros(L, x.cols());
  for (std::size_t begin = 0; begin < L; begin += segment_len) {
    const std::size_t end = std::min(L, begin + segment_len);
    const Tensor xs = x.row_block(begin, end);
    Tensor fs;
    if (first != nullptr) fs = first->row_block(begin, end);
    const Tensor part = estimate(model, times.subspan(begin, end - begin), xs, first ? &fs : nullptr);
    std::copy_n(part.data(), part.numel(), d.data() + begin * x.cols());
  }
  return d;
}

}  // namespace ndoflow::ndo
