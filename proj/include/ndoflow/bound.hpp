#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ndoflow/funclib.hpp"
#include "ndoflow/ndo.hpp"

// Error bound for NDO derivative estimates on a function h, expressed through
// a training function z:
//
//   rho(h'_NDO, h') <= L int|z - h| + int|z' - h'| + |T1 - T0|^3 M / (12 N^2) + rho(z'_NDO, z')
//
// with rho(a, b) = sum_i |a(t_i) - b(t_i)| over N + 1 equally spaced points
// (both endpoints included) and M = L max|e''| + max|e'''|, e = z - h.
namespace ndoflow::ndo {

/// Unnormalised L1 distance between two sampled functions.
double rho(std::span<const double> a, std::span<const double> b);

/// n_intervals + 1 equally spaced points on [t0, t1], endpoints exact.
std::vector<double> uniform_grid(double t0, double t1, std::size_t n_intervals);

/// Composite Simpson rule; `intervals` is rounded up to an even count.
double simpson(const std::function<double(double)>& f, double a, double b, std::size_t intervals);

/// Composite trapezoid rule on n_intervals equal pieces.
double trapezoid(const funclib::SymbolicFunction& g, double a, double b, std::size_t n_intervals);

/// max |f| sampled on a fixed dense grid of `points` points.
double max_abs(const funclib::SymbolicFunction& f, double a, double b, std::size_t points = 20001);

struct TrapezoidCheck {
  /// |exact integral - trapezoid sum|
  double lhs = 0.0;
  /// (T1 - T0)^3 max|g''| / (12 N^2)
  double rhs = 0.0;
  /// lhs <= rhs up to floating-point rounding of the two evaluations.
  bool holds() const;
};

TrapezoidCheck trapezoid_error_check(const funclib::SymbolicFunction& g, std::size_t n_intervals, double t0,
                                     double t1);

/// Terms of the bound for one (h, z) pair.
///
/// e = |z - h| is not smooth where z and h cross; M takes absolute values
/// after differentiating z - h, which is an upper bound away from crossings
/// only. `lipschitz` is an empirical lower estimate of the operator's true
/// Lipschitz constant, so the check is soft.
struct BoundReport {
  double term_lipschitz = 0.0;
  double term_derivative_gap = 0.0;
  double term_discretization = 0.0;
  double term_train_residual = 0.0;
  double total = 0.0;
  double observed = 0.0;
  double lipschitz = 0.0;
  double m = 0.0;

  bool holds() const { return observed <= total; }
};

struct BoundProbe {
  funclib::SymbolicFunction h;
  funclib::SymbolicFunction z;
};

/// max over probes of rho(h'_NDO, z'_NDO) / rho(h, z); pairs with rho(h, z) = 0 are skipped.
double estimate_lipschitz(const NdoModel& model, std::span<const BoundProbe> probes, std::size_t n_intervals,
                          double t0, double t1);

BoundReport verify_bound(const NdoModel& model, const funclib::SymbolicFunction& h,
                         const funclib::SymbolicFunction& z, std::size_t n_intervals, double t0, double t1,
                         double lipschitz);

/// Same, with the Lipschitz estimate taken over `probes` plus the (h, z) pair itself.
BoundReport verify_bound(const NdoModel& model, const funclib::SymbolicFunction& h,
                         const funclib::SymbolicFunction& z, std::size_t n_intervals, double t0, double t1,
                         std::span<const BoundProbe> probes);

/// Pairs with z taken from the first training examples of `library` and
/// h = z + a library function rescaled to a random fraction of z's RMS.
std::vector<BoundProbe> make_probe_suite(const funclib::LibraryConfig& library, std::size_t n_pairs,
                                         std::uint64_t seed, double min_fraction = 0.01,
                                         double max_fraction = 0.3);

}  // namespace ndoflow::ndo
