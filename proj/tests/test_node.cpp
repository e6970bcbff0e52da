#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ndoflow/node.hpp"
#include "ndoflow/ops.hpp"
#include "test_util.hpp"

using namespace ndoflow;
using namespace ndoflow::node;
using ad::Tensor;

namespace {

FieldConfig small_field() {
  FieldConfig cfg;
  cfg.state_dim = 2;
  cfg.hidden = {3};
  cfg.activation = Activation::tanh;
  return cfg;
}

/// Two trajectories of a damped rotation sampled on 6 points.
TrainData rotation_data() {
  TrainData d;
  d.times = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  d.observed_dims = {0, 1};
  const double x0[2][2] = {{1.0, 0.0}, {0.0, 0.5}};
  for (double t : d.times) {
    Tensor o = Tensor::zeros(2, 2);
    for (int r = 0; r < 2; ++r) {
      const double a = std::exp(-0.1 * t), c = std::cos(t), s = std::sin(t);
      o.at(r, 0) = a * (c * x0[r][0] - s * x0[r][1]);
      o.at(r, 1) = a * (s * x0[r][0] + c * x0[r][1]);
    }
    d.observations.push_back(o);
    Tensor target = Tensor::zeros(2, 2);
    target.at(0, 0) = -o.at(0, 1);
    target.at(0, 1) = o.at(0, 0);
    target.at(1, 0) = -o.at(1, 1);
    target.at(1, 1) = o.at(1, 0);
    d.derivative_targets.push_back(target);
    d.penalty_states.push_back(o);
  }
  d.initial_state = d.observations[0];
  return d;
}

TrainSpec base_spec(std::size_t iterations = 5) {
  TrainSpec s;
  s.iterations = iterations;
  s.optimizer.lr = 0.05;
  s.schedule.lr = 0.05;
  s.solver.method = ode::Method::rk4;
  s.solver.step_size = 0.05;
  return s;
}

double loss_and_grad(NodeModel& model, const TrainData& data, const TrainSpec& spec) {
  ad::Tape tape;
  model.params().zero_grad();
  auto bound = model.bind(tape);
  const ad::Var x0 = tape.constant(data.initial_state);
  std::vector<ad::Var> pred = {x0};
  const std::vector<double> q(data.times.begin() + 1, data.times.end());
  auto later = ode::integrate_with_grad(model.var_field(tape, bound), x0, data.times.front(), q, spec.solver);
  pred.insert(pred.end(), later.begin(), later.end());
  const auto terms = loss(model, bound, pred, data, spec);
  tape.backward(terms.total);
  return terms.total.value().item();
}

}  // namespace

TEST(Field, ConfigValidationAndJson) {
  auto cfg = small_field();
  EXPECT_EQ(FieldConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
  cfg.features = FeatureMap::three_body;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.state_dim = 18;
  EXPECT_EQ(cfg.input_dim(), 54u);
  cfg.second_order = true;
  cfg.time_input = true;
  EXPECT_EQ(cfg.input_dim(), 46u);
  EXPECT_EQ(cfg.output_dim(), 9u);
  EXPECT_THROW(parse_activation("swish"), Error);
  EXPECT_EQ(parse_regularizer(to_string(Regularizer::steer)), Regularizer::steer);
}

TEST(Field, SecondOrderPassesVelocityThrough) {
  FieldConfig cfg;
  cfg.state_dim = 4;
  cfg.second_order = true;
  const NodeModel model(cfg, 1);
  const Tensor x = Tensor::from_rows({{1.0, 2.0, 3.0, 4.0}});
  const Tensor f = model.eval_values(0.0, x);
  ASSERT_EQ(f.cols(), 4u);
  EXPECT_EQ(f.at(0, 0), 3.0);
  EXPECT_EQ(f.at(0, 1), 4.0);
}

TEST(Field, ThreeBodyFieldIsFinite) {
  FieldConfig cfg;
  cfg.state_dim = 18;
  cfg.features = FeatureMap::three_body;
  cfg.second_order = true;
  const NodeModel model(cfg, 2);
  Tensor x = Tensor::zeros(1, 18);
  for (std::size_t i = 0; i < 18; ++i) x.data()[i] = 0.1 * double(i) + (i % 3 == 0 ? 1.0 : 0.0) * double(i);
  const Tensor f = model.eval_values(0.0, x);
  EXPECT_TRUE(f.all_finite());
  EXPECT_EQ(f.cols(), 18u);
}

TEST(Field, NumericFieldMatchesEval) {
  const NodeModel model(small_field(), 3);
  const Tensor x = Tensor::from_rows({{0.3, -0.2}, {1.0, 0.4}});
  const Tensor f = model.eval_values(0.0, x);
  std::vector<double> out(4);
  model.field(2)(0.0, x.values(), out);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out[i], f[i]);
}

TEST(Loss, PenaltyVanishesWhenFieldMatchesTargets) {
  NodeModel model(small_field(), 4);
  auto data = rotation_data();
  for (std::size_t i = 0; i < data.times.size(); ++i) {
    data.derivative_targets[i] = model.eval_values(data.times[i], data.penalty_states[i]);
  }
  auto spec = base_spec();
  spec.regularizer = Regularizer::ndo;
  spec.lambda = 10.0;
  ad::Tape tape;
  auto bound = model.bind(tape);
  std::vector<ad::Var> pred;
  for (const auto& o : data.observations) pred.push_back(tape.constant(o));
  const auto terms = loss(model, bound, pred, data, spec);
  EXPECT_EQ(terms.penalty, 0.0);
  EXPECT_EQ(terms.trajectory_mse, 0.0);
  EXPECT_EQ(terms.total.value().item(), 0.0);
}

TEST(Loss, KnownOffsetAndPenalty) {
  NodeModel model(small_field(), 5);
  auto data = rotation_data();
  auto spec = base_spec();
  spec.regularizer = Regularizer::rnode;
  spec.lambda = 0.5;
  ad::Tape tape;
  auto bound = model.bind(tape);
  std::vector<ad::Var> pred;
  double expected_pen = 0.0;
  for (std::size_t i = 0; i < data.times.size(); ++i) {
    Tensor p = data.observations[i];
    for (std::size_t k = 0; k < p.numel(); ++k) p.data()[k] += 0.1;
    pred.push_back(tape.constant(p));
    const Tensor f = model.eval_values(data.times[i], data.penalty_states[i]);
    for (double v : f.values()) expected_pen += v * v;
  }
  const auto terms = loss(model, bound, pred, data, spec);
  EXPECT_NEAR(terms.trajectory_mse, 0.01, 1e-15);
  EXPECT_NEAR(terms.penalty, 0.5 * expected_pen / 2.0, 1e-12);
  EXPECT_NEAR(terms.total.value().item(), 0.01 * 2.0 + terms.penalty, 1e-12);
}

TEST(Loss, RegularisedGradientMatchesFiniteDifferences) {
  NodeModel model(small_field(), 6);
  ASSERT_EQ(model.params().element_count(), 17u);
  auto data = rotation_data();
  auto spec = base_spec();
  spec.regularizer = Regularizer::ndo;
  spec.lambda = 0.3;
  loss_and_grad(model, data, spec);
  const auto grad = model.params().flat_grads();
  auto values = model.params().flat_values();
  double worst = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double h = 1e-6, v = values[k];
    values[k] = v + h;
    model.params().assign_flat_values(values);
    const double up = loss_and_grad(model, data, spec);
    values[k] = v - h;
    model.params().assign_flat_values(values);
    const double down = loss_and_grad(model, data, spec);
    values[k] = v;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad[k]) / std::max(1e-2, std::abs(fd)));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Train, ZeroLambdaMatchesVanilla) {
  const auto data = rotation_data();
  NodeModel a(small_field(), 7), b(small_field(), 7);
  auto spec = base_spec();
  train(a, data, spec);
  spec.regularizer = Regularizer::ndo;
  spec.lambda = 0.0;
  train(b, data, spec);
  EXPECT_EQ(a.params().flat_values(), b.params().flat_values());
}

TEST(Train, SteerWithZeroWidthMatchesVanilla) {
  const auto data = rotation_data();
  NodeModel a(small_field(), 8), b(small_field(), 8);
  auto spec = base_spec();
  const auto ra = train(a, data, spec);
  spec.regularizer = Regularizer::steer;
  spec.steer_b = 0.0;
  const auto rb = train(b, data, spec);
  EXPECT_EQ(a.params().flat_values(), b.params().flat_values());
  EXPECT_EQ(ra.curve.back().loss, rb.curve.back().loss);
}

TEST(Train, SteerChangesTheEndpoint) {
  const auto data = rotation_data();
  NodeModel a(small_field(), 8), b(small_field(), 8);
  auto spec = base_spec();
  train(a, data, spec);
  spec.regularizer = Regularizer::steer;
  spec.steer_b = 0.1;
  train(b, data, spec);
  EXPECT_NE(a.params().flat_values(), b.params().flat_values());
  spec.steer_b = 0.25;
  EXPECT_THROW(train(b, data, spec), Error);
}

TEST(Train, ZeroIterationsLeavesModelUnchanged) {
  const auto data = rotation_data();
  NodeModel model(small_field(), 9);
  const auto before = model.params().flat_values();
  const auto r = train(model, data, base_spec(0));
  EXPECT_EQ(model.params().flat_values(), before);
  EXPECT_TRUE(r.curve.empty());
  EXPECT_EQ(r.initial_state, data.initial_state);
}

TEST(Train, ReducesLossAndIsDeterministic) {
  const auto data = rotation_data();
  NodeModel a(small_field(), 10), b(small_field(), 10);
  const auto ra = train(a, data, base_spec(60));
  const auto rb = train(b, data, base_spec(60));
  EXPECT_EQ(a.params().flat_values(), b.params().flat_values());
  EXPECT_LT(ra.curve.back().loss, 0.5 * ra.curve.front().loss);
  EXPECT_EQ(ra.skipped, 0u);
}

TEST(Train, HiddenInitialStateIsLearned) {
  auto data = rotation_data();
  data.observed_dims = {0};
  for (auto& o : data.observations) {
    Tensor c = Tensor::zeros(2, 1);
    c.at(0, 0) = o.at(0, 0);
    c.at(1, 0) = o.at(1, 0);
    o = c;
  }
  data.initial_state.at(0, 1) = 0.3;
  NodeModel model(small_field(), 11);
  const auto r = train(model, data, base_spec(20));
  EXPECT_EQ(r.initial_state.at(0, 0), data.observations[0].at(0, 0));
  EXPECT_NE(r.initial_state.at(0, 1), 0.3);
}

TEST(Train, RepeatedSolverFailuresAbort) {
  const auto data = rotation_data();
  NodeModel model(small_field(), 12);
  auto spec = base_spec(10);
  spec.solver.method = ode::Method::dopri5;
  spec.solver.max_steps = 1;
  EXPECT_THROW(train(model, data, spec), Error);
  spec.max_skip_fraction = 1.0;
  const auto r = train(model, data, spec);
  EXPECT_EQ(r.skipped, 10u);
}

TEST(Train, RegularizerNeedsTargets) {
  auto data = rotation_data();
  data.derivative_targets.clear();
  NodeModel model(small_field(), 13);
  auto spec = base_spec();
  spec.regularizer = Regularizer::ndo;
  spec.lambda = 1.0;
  EXPECT_THROW(train(model, data, spec), Error);
  spec.regularizer = Regularizer::rnode;
  EXPECT_NO_THROW(train(model, data, spec));
}

TEST(Predict, StartsAtInitialState) {
  const NodeModel model(small_field(), 14);
  const Tensor x0 = Tensor::from_rows({{0.2, 0.1}, {-0.5, 1.0}});
  const std::vector<double> q = {0.0, 0.5};
  const auto p = predict(model, x0, 0.0, q, ode::SolverConfig{});
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0], x0);
  EXPECT_TRUE(p[1].all_finite());
}

TEST(Metrics, OffsetGivesSquaredError) {
  const ode::Trajectory truth({0.0, 1.0, 2.0}, {1, 2, 3, 4, 5, 6}, 2);
  ode::Trajectory pred = truth;
  for (auto& v : pred.mutable_values()) v += 0.25;
  EXPECT_DOUBLE_EQ(mse(pred, truth), 0.0625);
  pred.mutable_values()[5] += 1.0;
  const std::vector<std::size_t> first = {0};
  EXPECT_DOUBLE_EQ(mse(pred, truth, first), 0.0625);
  const auto e = evaluate(pred, truth, 1.0, first);
  EXPECT_DOUBLE_EQ(e.in_mse, 0.0625);
  EXPECT_DOUBLE_EQ(e.ex_mse, 0.0625);
  const auto all = evaluate(pred, truth, 1.0);
  EXPECT_DOUBLE_EQ(all.ex_mse, (0.0625 + 1.25 * 1.25) / 2.0);
}

TEST(Checkpoint, FieldSaveLoad) {
  const NodeModel model(small_field(), 15);
  const auto path = std::filesystem::temp_directory_path() / "ndoflow_test_node.bin";
  model.save(path);
  const auto loaded = NodeModel::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded.config().to_json(), model.config().to_json());
  EXPECT_EQ(loaded.params().flat_values(), model.params().flat_values());
}
