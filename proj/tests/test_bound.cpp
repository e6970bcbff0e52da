#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ndoflow/bound.hpp"

using namespace ndoflow;
using namespace ndoflow::ndo;
using funclib::SymbolicFunction;

namespace {

Architecture tiny_arch() {
  Architecture a;
  a.hidden = 4;
  a.layers = 1;
  a.head = {4};
  return a;
}

}  // namespace

TEST(Bound, RhoAndGrid) {
  const std::vector<double> a = {1.0, 2.0, 3.0}, b = {1.5, 2.0, 1.0};
  EXPECT_DOUBLE_EQ(rho(a, b), 2.5);
  EXPECT_THROW(rho(a, std::vector<double>{1.0}), ShapeError);
  const auto t = uniform_grid(0.0, 0.3, 7);
  ASSERT_EQ(t.size(), 8u);
  EXPECT_EQ(t.front(), 0.0);
  EXPECT_EQ(t.back(), 0.3);
  EXPECT_THROW(uniform_grid(0.0, 1.0, 0), Error);
}

TEST(Bound, SimpsonExactOnCubics) {
  auto f = [](double t) { return 2 * t * t * t - t + 1; };
  EXPECT_NEAR(simpson(f, 0.0, 2.0, 3), 8.0 - 2.0 + 2.0, 1e-12);
  EXPECT_NEAR(simpson([](double t) { return std::sin(t); }, 0.0, std::numbers::pi, 200), 2.0, 1e-8);
}

TEST(Bound, TrapezoidErrorEstimateHoldsOnRandomFunctions) {
  funclib::LibraryConfig cfg;
  cfg.max_frequency = 20;
  cfg.max_degree = 6;
  cfg.sparse = true;
  cfg.term_probability = 0.3;
  Rng rng(17);
  std::size_t checked = 0;
  for (int k = 0; k < 100; ++k) {
    const auto g = funclib::sample_function(cfg, rng);
    for (std::size_t n : {10u, 100u}) {
      const auto c = trapezoid_error_check(g, n, 0.0, 1.0);
      EXPECT_TRUE(c.holds()) << k << " n=" << n << " lhs=" << c.lhs << " rhs=" << c.rhs;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 200u);
}

TEST(Bound, TrapezoidEstimateIsSharpForParabola) {
  const auto g = SymbolicFunction::monomial(2, 1.0);
  const auto c = trapezoid_error_check(g, 4, 0.0, 1.0);
  EXPECT_NEAR(c.lhs, c.rhs, 1e-15);
  EXPECT_NEAR(c.rhs, 2.0 / (12.0 * 16.0), 1e-15);
}

TEST(Bound, ReducesToTrainingResidualWhenFunctionsCoincide) {
  const NdoModel model(tiny_arch(), 4);
  const auto z = SymbolicFunction::sine(2, 1.0) + SymbolicFunction::monomial(1, 0.5);
  const auto r = verify_bound(model, z, z, 50, 0.0, 1.0, 3.0);
  EXPECT_EQ(r.term_lipschitz, 0.0);
  EXPECT_EQ(r.term_derivative_gap, 0.0);
  EXPECT_EQ(r.term_discretization, 0.0);
  EXPECT_EQ(r.total, r.term_train_residual);
  EXPECT_EQ(r.observed, r.total);
  EXPECT_TRUE(r.holds());
}

TEST(Bound, DiscretisationTermScalesInverseSquare) {
  const NdoModel model(tiny_arch(), 5);
  const auto z = SymbolicFunction::sine(3, 1.0);
  const auto h = z + SymbolicFunction::cosine(5, 0.1);
  const auto a = verify_bound(model, h, z, 25, 0.0, 1.0, 2.0);
  const auto b = verify_bound(model, h, z, 50, 0.0, 1.0, 2.0);
  EXPECT_NEAR(a.term_discretization / b.term_discretization, 4.0, 1e-3);
  EXPECT_NEAR(a.term_lipschitz, b.term_lipschitz, 1e-6);
  const double expected_gap = simpson([](double t) { return std::abs(0.5 * std::sin(5 * t)); }, 0.0, 1.0, 20000);
  EXPECT_NEAR(a.term_derivative_gap, expected_gap, 1e-6);
}

TEST(Bound, LipschitzEstimateAndProbes) {
  const NdoModel model(tiny_arch(), 6);
  funclib::LibraryConfig lib;
  lib.max_frequency = 3;
  lib.max_degree = 3;
  lib.n_functions = 10;
  const auto probes = make_probe_suite(lib, 5, 1);
  ASSERT_EQ(probes.size(), 5u);
  const double L = estimate_lipschitz(model, probes, 40, 0.0, 1.0);
  EXPECT_GT(L, 0.0);
  const std::vector<BoundProbe> same = {{probes[0].z, probes[0].z}};
  EXPECT_EQ(estimate_lipschitz(model, same, 40, 0.0, 1.0), 0.0);
  EXPECT_THROW(make_probe_suite(lib, 2, 1, 0.0, 0.1), Error);
  EXPECT_THROW(verify_bound(model, probes[0].h, probes[0].z, 40, 0.0, 1.0, -1.0), Error);
}
