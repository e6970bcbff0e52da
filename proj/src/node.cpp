#include "ndoflow/node.hpp"

#include <chrono>
#include <cmath>

#include "ndoflow/checkpoint.hpp"
#include "ndoflow/funclib.hpp"
#include "ndoflow/ops.hpp"

namespace ndoflow::node {

using ad::Tensor;
using ad::Tape;
using ad::Var;

std::string to_string(Activation a) {
  switch (a) {
    case Activation::elu: return "elu";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  throw Error("unknown activation");
}

Activation parse_activation(const std::string& name) {
  for (auto a : {Activation::elu, Activation::tanh, Activation::relu}) {
    if (to_string(a) == name) return a;
  }
  throw Error("unknown activation '" + name + "'");
}

std::string to_string(FeatureMap f) { return f == FeatureMap::identity ? "identity" : "three_body"; }

FeatureMap parse_feature_map(const std::string& name) {
  if (name == "identity") return FeatureMap::identity;
  if (name == "three_body") return FeatureMap::three_body;
  throw Error("unknown feature map '" + name + "'");
}

void FieldConfig::validate() const {
  if (state_dim == 0) throw Error("field state_dim must be positive");
  for (auto w : hidden) {
    if (w == 0) throw Error("field hidden widths must be positive");
  }
  if (second_order && state_dim % 2 != 0) throw Error("second-order fields need an even state dimension");
  if (features == FeatureMap::three_body && state_dim != 18) {
    throw Error("three_body features need an 18-dimensional state (positions, then velocities)");
  }
}

std::size_t FieldConfig::input_dim() const {
  std::size_t d = state_dim;
  if (features == FeatureMap::three_body) d = second_order ? 45 : 45 + 9;
  return d + (time_input ? 1 : 0);
}

nlohmann::json FieldConfig::to_json() const {
  return {{"state_dim", state_dim},       {"hidden", hidden},
          {"activation", to_string(activation)}, {"time_input", time_input},
          {"second_order", second_order}, {"features", to_string(features)}};
}

FieldConfig FieldConfig::from_json(const nlohmann::json& j) {
  FieldConfig c;
  c.state_dim = j.value("state_dim", c.state_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.activation = parse_activation(j.value("activation", to_string(c.activation)));
  c.time_input = j.value("time_input", c.time_input);
  c.second_order = j.value("second_order", c.second_order);
  c.features = parse_feature_map(j.value("features", to_string(c.features)));
  c.validate();
  return c;
}

NodeModel::NodeModel(FieldConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  std::size_t in = cfg_.input_dim();
  std::vector<std::size_t> widths = cfg_.hidden;
  widths.push_back(cfg_.output_dim());
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const double k = 1.0 / std::sqrt(double(in));
    std::uniform_real_distribution<double> u(-k, k);
    Tensor w = Tensor::zeros(in, widths[l]);
    for (double& v : w.values()) v = u(rng);
    Tensor b = Tensor::zeros(1, widths[l]);
    for (double& v : b.values()) v = u(rng);
    params_.add("layer" + std::to_string(l) + ".weight", std::move(w));
    params_.add("layer" + std::to_string(l) + ".bias", std::move(b));
    in = widths[l];
  }
}

namespace {

Var activate(Activation a, const Var& x) {
  switch (a) {
    case Activation::elu: return ad::elu(x);
    case Activation::tanh: return ad::tanh(x);
    case Activation::relu: return ad::relu(x);
  }
  throw Error("unknown activation");
}

Var three_body_features(const Var& r) {
  std::vector<Var> parts = {r};
  static constexpr std::size_t pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (const auto& p : pairs) {
    Var d = ad::slice_cols(r, 3 * p[0], 3 * p[0] + 3) - ad::slice_cols(r, 3 * p[1], 3 * p[1] + 3);
    Var n2 = ad::row_sum(ad::square(d));
    Var n1 = ad::sqrt(n2);
    parts.push_back(d);
    parts.push_back(d / n1);
    parts.push_back(d / n2);
    parts.push_back(d / (n1 * n2));
  }
  return ad::concat_cols(parts);
}

}  // namespace

Var NodeModel::eval(const std::vector<Var>& p, double t, const Var& x) const {
  if (x.cols() != cfg_.state_dim) {
    throw ShapeError("field expects " + std::to_string(cfg_.state_dim) + " state columns, got " +
                     std::to_string(x.cols()));
  }
  Tape& tape = x.tape();
  const std::size_t half = cfg_.state_dim / 2;
  Var h = x;
  if (cfg_.features == FeatureMap::three_body) {
    h = three_body_features(ad::slice_cols(x, 0, 9));
    if (!cfg_.second_order) h = ad::concat_cols({h, ad::slice_cols(x, 9, 18)});
  }
  if (cfg_.time_input) h = ad::concat_cols({h, tape.constant(Tensor::full(x.rows(), 1, t))});
  const std::size_t layers = p.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::affine(h, p[2 * l], p[2 * l + 1]);
    if (l + 1 < layers) h = activate(cfg_.activation, h);
  }
  if (cfg_.second_order) return ad::concat_cols({ad::slice_cols(x, half, cfg_.state_dim), h});
  return h;
}

std::vector<Var> NodeModel::bind(ad::Tape& tape) {
  std::vector<Var> p;
  for (auto& param : params_) p.push_back(tape.param(param));
  return p;
}

Tensor NodeModel::eval_values(double t, const Tensor& x) const {
  ad::Tape tape;
  std::vector<Var> p;
  for (const auto& param : params_) p.push_back(tape.constant(param.value()));
  return eval(p, t, tape.constant(x)).value();
}

ode::VarField NodeModel::var_field(ad::Tape& tape, const std::vector<Var>& bound) const {
  return [this, &tape, bound](double t, const Var& x) {
    if (x.tape_ptr() == &tape) return eval(bound, t, x);
    std::vector<Var> local;
    for (const auto& param : params_) local.push_back(x.tape().constant(param.value()));
    return eval(local, t, x);
  };
}

ode::Field NodeModel::field(std::size_t rows) const {
  return [this, rows](double t, std::span<const double> x, std::span<double> dx) {
    const Tensor y = eval_values(t, Tensor({rows, x.size() / rows}, std::vector<double>(x.begin(), x.end())));
    std::copy(y.values().begin(), y.values().end(), dx.begin());
  };
}

void NodeModel::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  nlohmann::json meta = extra;
  meta["field"] = cfg_.to_json();
  ad::save_checkpoint(path, params_, meta);
}

NodeModel NodeModel::load(const std::filesystem::path& path) {
  auto ck = ad::load_checkpoint(path);
  if (!ck.metadata.contains("field")) throw Error("checkpoint has no field configuration: " + path.string());
  NodeModel m(FieldConfig::from_json(ck.metadata.at("field")), 0);
  if (m.params_.size() != ck.params.size()) throw Error("checkpoint does not match its field: " + path.string());
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    if (!ck.params[i].value().same_shape(m.params_[i].value())) {
      throw Error("checkpoint parameter mismatch at " + ck.params[i].name());
    }
    m.params_[i].value() = ck.params[i].value();
  }
  return m;
}

std::string to_string(Regularizer r) {
  switch (r) {
    case Regularizer::none: return "none";
    case Regularizer::ndo: return "ndo";
    case Regularizer::rnode: return "rnode";
    case Regularizer::steer: return "steer";
  }
  throw Error("unknown regularizer");
}

Regularizer parse_regularizer(const std::string& name) {
  for (auto r : {Regularizer::none, Regularizer::ndo, Regularizer::rnode, Regularizer::steer}) {
    if (to_string(r) == name) return r;
  }
  throw Error("unknown regularizer '" + name + "'");
}

void TrainSpec::validate() const {
  if (lambda < 0.0) throw Error("lambda must be non-negative");
  if (steer_b < 0.0) throw Error("steer_b must be non-negative");
  if (!(max_skip_fraction >= 0.0 && max_skip_fraction <= 1.0)) throw Error("max_skip_fraction must lie in [0, 1]");
  solver.validate();
}

nlohmann::json TrainSpec::to_json() const {
  nlohmann::json opt = {{"kind", ad::to_string(optimizer.kind)},
                        {"lr", optimizer.lr},
                        {"beta1", optimizer.beta1},
                        {"beta2", optimizer.beta2},
                        {"eps", optimizer.eps},
                        {"alpha", optimizer.alpha}};
  if (optimizer.max_grad_norm) opt["max_grad_norm"] = *optimizer.max_grad_norm;
  return {{"regularizer", to_string(regularizer)},
          {"lambda", lambda},
          {"steer_b", steer_b},
          {"iterations", iterations},
          {"optimizer", opt},
          {"schedule",
           {{"kind", ad::to_string(schedule.kind)},
            {"lr_min", schedule.lr_min},
            {"t_max", schedule.t_max},
            {"gamma", schedule.gamma}}},
          {"solver",
           {{"method", ode::to_string(solver.method)},
            {"rtol", solver.rtol},
            {"atol", solver.atol},
            {"initial_step", solver.initial_step},
            {"step_size", solver.step_size},
            {"max_steps", solver.max_steps}}},
          {"seed", seed},
          {"max_skip_fraction", max_skip_fraction}};
}

TrainSpec TrainSpec::from_json(const nlohmann::json& j) {
  TrainSpec s;
  s.regularizer = parse_regularizer(j.value("regularizer", to_string(s.regularizer)));
  s.lambda = j.value("lambda", s.lambda);
  s.steer_b = j.value("steer_b", s.steer_b);
  s.iterations = j.value("iterations", s.iterations);
  s.seed = j.value("seed", s.seed);
  s.max_skip_fraction = j.value("max_skip_fraction", s.max_skip_fraction);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    s.optimizer.kind = ad::parse_optimizer_kind(o.value("kind", ad::to_string(s.optimizer.kind)));
    s.optimizer.lr = o.value("lr", s.optimizer.lr);
    s.optimizer.beta1 = o.value("beta1", s.optimizer.beta1);
    s.optimizer.beta2 = o.value("beta2", s.optimizer.beta2);
    s.optimizer.eps = o.value("eps", s.optimizer.eps);
    s.optimizer.alpha = o.value("alpha", s.optimizer.alpha);
    if (o.contains("max_grad_norm") && !o.at("max_grad_norm").is_null()) {
      s.optimizer.max_grad_norm = o.at("max_grad_norm").get<double>();
    }
  }
  s.schedule.lr = s.optimizer.lr;
  s.schedule.t_max = s.iterations;
  if (j.contains("schedule")) {
    const auto& c = j.at("schedule");
    s.schedule.kind = ad::parse_schedule_kind(c.value("kind", ad::to_string(s.schedule.kind)));
    s.schedule.lr_min = c.value("lr_min", s.schedule.lr_min);
    s.schedule.t_max = c.value("t_max", s.schedule.t_max);
    s.schedule.gamma = c.value("gamma", s.schedule.gamma);
  }
  if (j.contains("solver")) {
    const auto& c = j.at("solver");
    s.solver.method = ode::parse_method(c.value("method", ode::to_string(s.solver.method)));
    s.solver.rtol = c.value("rtol", s.solver.rtol);
    s.solver.atol = c.value("atol", s.solver.atol);
    s.solver.initial_step = c.value("initial_step", s.solver.initial_step);
    s.solver.step_size = c.value("step_size", s.solver.step_size);
    s.solver.max_steps = c.value("max_steps", s.solver.max_steps);
  }
  s.validate();
  return s;
}

void TrainData::validate(const TrainSpec& spec) const {
  const std::size_t n = times.size();
  if (n < 2) throw Error("training needs at least 2 time points");
  for (std::size_t i = 1; i < n; ++i) {
    if (!(times[i] > times[i - 1])) throw Error("training times must be strictly increasing");
  }
  if (observations.size() != n) throw ShapeError("one observation per time point is required");
  const std::size_t R = trajectories(), D = state_dim();
  if (R == 0 || D == 0) throw ShapeError("initial_state must be a non-empty R x D matrix");
  for (auto d : observed_dims) {
    if (d >= D) throw ShapeError("observed dimension out of range");
  }
  for (const auto& o : observations) {
    if (o.rows() != R || o.cols() != observed_dims.size()) throw ShapeError("observation block has the wrong shape");
  }
  if (spec.regularizer == Regularizer::ndo || spec.regularizer == Regularizer::rnode) {
    if (spec.regularizer == Regularizer::ndo && derivative_targets.size() != n) {
      throw Error("the ndo regularizer needs derivative estimates at every time point");
    }
    if (penalty_states.size() != n) throw Error("the regularizer needs penalty states at every time point");
    for (std::size_t i = 0; i < n; ++i) {
      if (penalty_states[i].rows() != R || penalty_states[i].cols() != D) throw ShapeError("penalty state shape");
      if (spec.regularizer == Regularizer::ndo &&
          (derivative_targets[i].rows() != R || derivative_targets[i].cols() != D)) {
        throw ShapeError("derivative target shape");
      }
    }
  }
  if (spec.regularizer == Regularizer::steer && n >= 2 && !(spec.steer_b < times[n - 1] - times[n - 2])) {
    throw Error("steer_b must be smaller than the last sampling gap");
  }
}

LossTerms loss(const NodeModel& model, const std::vector<Var>& bound, const std::vector<Var>& predictions,
               const TrainData& data, const TrainSpec& spec) {
  Tape& tape = bound.front().tape();
  const std::size_t n = data.times.size(), R = data.trajectories();
  if (predictions.size() != n) throw ShapeError("one prediction per time point is required");
  std::vector<Var> residuals;
  residuals.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Var> cols;
    for (auto d : data.observed_dims) cols.push_back(ad::slice_cols(predictions[i], d, d + 1));
    Var obs = cols.size() == 1 ? cols.front() : ad::concat_cols(cols);
    residuals.push_back(ad::sum_squares(obs - tape.constant(data.observations[i])));
  }
  Var sse = ad::linear_combination([&] {
    std::vector<std::pair<double, Var>> terms;
    for (const auto& r : residuals) terms.emplace_back(1.0, r);
    return terms;
  }());
  LossTerms out;
  out.trajectory_mse = sse.value().item() / double(n * R * data.observed_dims.size());
  out.total = ad::scale(sse, 1.0 / (double(n) * double(R)));

  if (spec.regularizer == Regularizer::ndo || spec.regularizer == Regularizer::rnode) {
    std::vector<std::pair<double, Var>> terms;
    for (std::size_t i = 0; i < n; ++i) {
      Var f = model.eval(bound, data.times[i], tape.constant(data.penalty_states[i]));
      if (spec.regularizer == Regularizer::ndo) f = tape.constant(data.derivative_targets[i]) - f;
      terms.emplace_back(1.0, ad::sum_squares(f));
    }
    Var penalty = ad::scale(ad::linear_combination(terms), spec.lambda / double(R));
    out.penalty = penalty.value().item();
    out.total = out.total + penalty;
  }
  return out;
}

namespace {

/// Full R x D initial state: observed columns fixed, the others trainable.
Var initial_state_var(ad::Tape& tape, const TrainData& data, ad::Parameter* hidden,
                      const std::vector<std::size_t>& hidden_dims) {
  const std::size_t D = data.state_dim();
  std::vector<Var> cols(D);
  for (std::size_t k = 0; k < data.observed_dims.size(); ++k) {
    cols[data.observed_dims[k]] = tape.constant(
        Tensor::column(std::vector<double>([&] {
          std::vector<double> c(data.trajectories());
          for (std::size_t r = 0; r < c.size(); ++r) c[r] = data.observations[0].at(r, k);
          return c;
        }())));
  }
  if (hidden != nullptr) {
    Var h = tape.param(*hidden);
    for (std::size_t k = 0; k < hidden_dims.size(); ++k) cols[hidden_dims[k]] = ad::slice_cols(h, k, k + 1);
  }
  return D == 1 ? cols.front() : ad::concat_cols(cols);
}

}  // namespace

TrainResult train(NodeModel& model, const TrainData& data, const TrainSpec& spec) {
  spec.validate();
  data.validate(spec);
  if (data.state_dim() != model.config().state_dim) throw ShapeError("data and field differ in state dimension");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t R = data.trajectories(), D = data.state_dim();

  std::vector<std::size_t> hidden_dims;
  for (std::size_t d = 0; d < D; ++d) {
    if (std::find(data.observed_dims.begin(), data.observed_dims.end(), d) == data.observed_dims.end()) {
      hidden_dims.push_back(d);
    }
  }
  ad::ParameterSet init;
  if (!hidden_dims.empty()) {
    Tensor h = Tensor::zeros(R, hidden_dims.size());
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t k = 0; k < hidden_dims.size(); ++k) h.at(r, k) = data.initial_state.at(r, hidden_dims[k]);
    }
    init.add("x0.hidden", std::move(h));
  }

  ad::Optimizer opt_field(spec.optimizer), opt_init(spec.optimizer);
  Rng steer_rng(derive_seed(spec.seed, 0x57EE4));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  TrainResult result;
  std::vector<double> query(data.times.begin() + 1, data.times.end());
  const std::size_t max_skips = std::size_t(std::floor(spec.max_skip_fraction * double(spec.iterations)));
  ad::Tape tape;
  for (std::size_t it = 0; it < spec.iterations; ++it) {
    std::vector<double> q = query;
    if (spec.regularizer == Regularizer::steer) q.back() += spec.steer_b * (2.0 * unit(steer_rng) - 1.0);
    TrainCurvePoint pt;
    pt.iteration = it + 1;
    try {
      tape.clear();
      model.params().zero_grad();
      init.zero_grad();
      auto bound = model.bind(tape);
      Var x0 = initial_state_var(tape, data, init.size() ? &init[0] : nullptr, hidden_dims);
      std::vector<Var> pred = {x0};
      auto later = ode::integrate_with_grad(model.var_field(tape, bound), x0, data.times.front(), q, spec.solver);
      pred.insert(pred.end(), later.begin(), later.end());
      LossTerms terms = loss(model, bound, pred, data, spec);
      tape.backward(terms.total);
      const double lr = spec.schedule.rate(it);
      opt_field.step(model.params(), lr);
      if (init.size()) opt_init.step(init, lr);
      pt.loss = terms.total.value().item();
      pt.trajectory_mse = terms.trajectory_mse;
    } catch (const ode::SolverError&) {
      pt.skipped = true;
    } catch (const NumericError&) {
      pt.skipped = true;
    }
    if (pt.skipped) {
      pt.loss = std::nan("");
      pt.trajectory_mse = std::nan("");
      if (++result.skipped > max_skips) {
        throw Error("training aborted: " + std::to_string(result.skipped) + " of " + std::to_string(it + 1) +
                    " iterations skipped after solver failures");
      }
    }
    result.curve.push_back(pt);
  }
  tape.clear();
  result.initial_state = data.initial_state;
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t k = 0; k < data.observed_dims.size(); ++k) {
      result.initial_state.at(r, data.observed_dims[k]) = data.observations[0].at(r, k);
    }
    for (std::size_t k = 0; k < hidden_dims.size(); ++k) {
      result.initial_state.at(r, hidden_dims[k]) = init[0].value().at(r, k);
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<Tensor> predict(const NodeModel& model, const Tensor& x0, double t0, std::span<const double> query_times,
                            const ode::SolverConfig& solver) {
  const std::size_t R = x0.rows(), D = x0.cols();
  if (D != model.config().state_dim) throw ShapeError("initial state and field differ in dimension");
  const ode::Trajectory traj = ode::integrate(model.field(R), x0.values(), t0, query_times, solver);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    out.emplace_back(ad::Shape{R, D}, std::vector<double>(traj.state(i).begin(), traj.state(i).end()));
  }
  return out;
}

double mse(const ode::Trajectory& pred, const ode::Trajectory& truth, std::span<const std::size_t> dims) {
  if (pred.size() != truth.size() || pred.dim() != truth.dim()) throw ShapeError("prediction and truth grids differ");
  if (pred.empty()) throw Error("mse of an empty trajectory");
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred.time(i) != truth.time(i)) throw ShapeError("prediction and truth grids differ");
    auto add = [&](std::size_t d) {
      const double e = pred.at(i, d) - truth.at(i, d);
      s += e * e;
      ++count;
    };
    if (dims.empty()) {
      for (std::size_t d = 0; d < pred.dim(); ++d) add(d);
    } else {
      for (auto d : dims) add(d);
    }
  }
  return s / double(count);
}

EvalResult evaluate(const ode::Trajectory& pred, const ode::Trajectory& truth, double split_time,
                    std::span<const std::size_t> dims) {
  ode::Trajectory pin(pred.dim()), pex(pred.dim()), tin(truth.dim()), tex(truth.dim());
  if (pred.size() != truth.size()) throw ShapeError("prediction and truth grids differ");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred.time(i) <= split_time) {
      pin.push_back(pred.time(i), pred.state(i));
      tin.push_back(truth.time(i), truth.state(i));
    } else {
      pex.push_back(pred.time(i), pred.state(i));
      tex.push_back(truth.time(i), truth.state(i));
    }
  }
  EvalResult r;
  if (!pin.empty()) r.in_mse = mse(pin, tin, dims);
  if (!pex.empty()) r.ex_mse = mse(pex, tex, dims);
  return r;
}

}  // namespace ndoflow::node
