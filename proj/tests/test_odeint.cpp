#include <gtest/gtest.h>

#include <cmath>

#include "ndoflow/dynamics.hpp"
#include "ndoflow/odeint.hpp"
#include "ndoflow/ops.hpp"

using namespace ndoflow;
using namespace ndoflow::ode;
using ad::Tensor;
using ad::Var;

namespace {

Field exponential_decay(double k) {
  return [k](double, std::span<const double> x, std::span<double> dx) { dx[0] = -k * x[0]; };
}

}  // namespace

TEST(Integrate, QueryAtStartReturnsInitialState) {
  const std::vector<double> x0 = {1.5, -2.0};
  const std::vector<double> q = {0.0};
  const auto traj = integrate([](double, auto, auto dx) { dx[0] = 1.0; dx[1] = 1.0; }, x0, 0.0, q, SolverConfig{});
  ASSERT_EQ(traj.size(), 1u);
  EXPECT_EQ(traj.state(0)[0], 1.5);
  EXPECT_EQ(traj.state(0)[1], -2.0);
}

TEST(Integrate, Dopri5ExponentialDecay) {
  SolverConfig cfg;
  cfg.rtol = 1e-9;
  cfg.atol = 1e-12;
  const std::vector<double> x0 = {1.0};
  const std::vector<double> q = {0.1, 0.5, 1.0, 2.0};
  const auto traj = integrate(exponential_decay(1.3), x0, 0.0, q, cfg);
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(traj.at(i, 0), std::exp(-1.3 * q[i]), 1e-9);
}

TEST(Integrate, RejectsUnsortedQueries) {
  const std::vector<double> x0 = {1.0};
  const std::vector<double> q = {0.5, 0.2};
  EXPECT_THROW(integrate(exponential_decay(1.0), x0, 0.0, q, SolverConfig{}), Error);
  const std::vector<double> early = {-0.1};
  EXPECT_THROW(integrate(exponential_decay(1.0), x0, 0.0, early, SolverConfig{}), Error);
}

TEST(Integrate, MaxStepsRaisesSolverError) {
  SolverConfig cfg;
  cfg.max_steps = 5;
  const std::vector<double> x0 = {1.0};
  const std::vector<double> q = {100.0};
  try {
    integrate(exponential_decay(50.0), x0, 0.0, q, cfg);
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_GT(e.time(), 0.0);
    EXPECT_LT(e.time(), 100.0);
  }
}

TEST(Integrate, NonFiniteFieldRaises) {
  const std::vector<double> x0 = {1.0};
  const std::vector<double> q = {1.0};
  auto blowup = [](double, std::span<const double>, std::span<double> dx) { dx[0] = std::nan(""); };
  EXPECT_THROW(integrate(blowup, x0, 0.0, q, SolverConfig{}), SolverError);
}

TEST(Integrate, ReferenceSolveMatchesSpiralExample) {
  const auto spec = dynamics::SystemSpec::defaults(dynamics::SystemKind::spiral);
  const std::vector<double> x0 = {2.0, 0.0};
  const std::vector<double> q = {1.0};
  const auto traj = reference_solve(dynamics::make_field(spec), x0, 0.0, q);
  EXPECT_NEAR(traj.at(0, 0), -0.753091, 1e-5);
  EXPECT_NEAR(traj.at(0, 1), -1.645534, 1e-5);
}

TEST(Integrate, Rk4ObservedOrder) {
  const std::vector<double> x0 = {1.0};
  const std::vector<double> q = {1.0};
  double prev = 0.0;
  for (double h : {0.1, 0.05, 0.025}) {
    SolverConfig cfg;
    cfg.method = Method::rk4;
    cfg.step_size = h;
    const double err = std::abs(integrate(exponential_decay(2.0), x0, 0.0, q, cfg).at(0, 0) - std::exp(-2.0));
    if (prev > 0.0) EXPECT_GT(std::log2(prev / err), 3.8);
    prev = err;
  }
}

TEST(Integrate, Dopri5StatsCountWork) {
  SolveStats stats;
  const std::vector<double> x0 = {1.0};
  const std::vector<double> q = {1.0};
  integrate(exponential_decay(1.0), x0, 0.0, q, SolverConfig{}, &stats);
  EXPECT_GT(stats.accepted, 0u);
  EXPECT_GE(stats.evaluations, 6 * stats.accepted);
}

TEST(IntegrateWithGrad, ForwardMatchesPlainSolve) {
  SolverConfig cfg;
  ad::Tape tape;
  Var x0 = tape.leaf(Tensor::from_rows({{2.0, 0.0}}));
  const auto spec = dynamics::SystemSpec::defaults(dynamics::SystemKind::spiral);
  const Tensor A = Tensor::from_rows({{spec.a, spec.c}, {spec.b, spec.d}});
  const std::vector<double> q = {0.5, 1.0};
  const auto out = integrate_with_grad([&](double, const Var& x) { return ad::matmul(x, x.tape().constant(A)); }, x0, 0.0, q, cfg);
  const std::vector<double> x0v = {2.0, 0.0};
  const auto plain = integrate(dynamics::make_field(spec), x0v, 0.0, q, cfg);
  for (std::size_t i = 0; i < q.size(); ++i) {
    EXPECT_NEAR(out[i].value()[0], plain.at(i, 0), 1e-12);
    EXPECT_NEAR(out[i].value()[1], plain.at(i, 1), 1e-12);
  }
}

TEST(IntegrateWithGrad, GradientMatchesFiniteDifferencesOfDiscreteSolver) {
  for (Method method : {Method::dopri5, Method::rk4}) {
    SolverConfig cfg;
    cfg.method = method;
    cfg.step_size = 0.05;
    cfg.rtol = 1e-6;
    cfg.atol = 1e-8;
    const std::vector<double> q = {0.3, 0.7, 1.0};
    auto loss = [&](double k, double x0v, ad::Tape& tape, Var* kv, Var* xv) {
      Var kk = tape.leaf(Tensor::scalar(k));
      Var x0 = tape.leaf(Tensor::scalar(x0v));
      if (kv) *kv = kk;
      if (xv) *xv = x0;
      auto field = [&](double t, const Var& x) {
        Var kb = &x.tape() == &tape ? kk : x.tape().constant(Tensor::scalar(k));
        return ad::add_scalar(ad::mul(ad::neg(kb), ad::sin(x)), 0.1 * t);
      };
      const auto out = integrate_with_grad(field, x0, 0.0, q, cfg);
      Var s = ad::square(out[0]);
      for (std::size_t i = 1; i < out.size(); ++i) s = ad::add(s, ad::square(out[i]));
      return s;
    };
    ad::Tape tape;
    Var kv, xv;
    tape.backward(loss(0.8, 1.2, tape, &kv, &xv));
    const double gk = tape.grad(kv).item(), gx = tape.grad(xv).item();
    const double h = 1e-6;
    auto value = [&](double k, double x) {
      ad::Tape t;
      return loss(k, x, t, nullptr, nullptr).value().item();
    };
    // The adaptive step sequence is piecewise constant in the inputs, so the
    // discrete solver is differentiable almost everywhere.
    const double nk = (value(0.8 + h, 1.2) - value(0.8 - h, 1.2)) / (2 * h);
    const double nx = (value(0.8, 1.2 + h) - value(0.8, 1.2 - h)) / (2 * h);
    EXPECT_NEAR(gk, nk, 1e-4 * std::max(1.0, std::abs(nk))) << to_string(method);
    EXPECT_NEAR(gx, nx, 1e-4 * std::max(1.0, std::abs(nx))) << to_string(method);
  }
}

class ClosedFormAccuracy : public ::testing::TestWithParam<std::tuple<dynamics::SystemKind, double>> {};

TEST_P(ClosedFormAccuracy, Dopri5WithinHundredTimesRtol) {
  const auto [kind, rtol] = GetParam();
  const auto spec = dynamics::SystemSpec::defaults(kind);
  SolverConfig cfg;
  cfg.rtol = rtol;
  cfg.atol = rtol * 1e-3;
  cfg.max_steps = 1000000;
  const auto x0 = spec.default_initial_state();
  std::vector<double> q;
  for (int i = 1; i <= 50; ++i) q.push_back(spec.t_test * i / 50.0);
  const auto traj = integrate(dynamics::make_field(spec), x0, spec.t0, q, cfg);
  double worst = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto exact = dynamics::closed_form(spec, x0, q[i]);
    for (std::size_t d = 0; d < exact.size(); ++d) {
      worst = std::max(worst, std::abs(traj.at(i, d) - exact[d]) / std::max(1.0, std::abs(exact[d])));
    }
  }
  EXPECT_LE(worst, 100 * rtol);
}

INSTANTIATE_TEST_SUITE_P(Systems, ClosedFormAccuracy,
                         ::testing::Combine(::testing::Values(dynamics::SystemKind::spiral,
                                                              dynamics::SystemKind::stiff1,
                                                              dynamics::SystemKind::oscillator),
                                            ::testing::Values(1e-5, 1e-7)));
