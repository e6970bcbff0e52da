#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "ndoflow/tensor.hpp"

namespace ndoflow {

using Rng = std::mt19937_64;

/// Independent, well-mixed seed for stream `index` of a base seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace ndoflow

namespace ndoflow::funclib {

/// a * sin(frequency * t) + b * cos(frequency * t), frequency >= 1.
struct TrigTerm {
  int frequency = 1;
  double sin_coef = 0.0;
  double cos_coef = 0.0;

  friend bool operator==(const TrigTerm&, const TrigTerm&) = default;
};

/// Closed-form trigonometric + polynomial function with exact calculus.
///
/// The constant basis appears only once, as poly()[0]; cos(0 t) is folded
/// into it and sin(0 t) does not exist.
class SymbolicFunction {
 public:
  SymbolicFunction() = default;
  SymbolicFunction(std::vector<TrigTerm> trig, std::vector<double> poly);

  static SymbolicFunction constant(double c);
  static SymbolicFunction monomial(int degree, double coef);
  static SymbolicFunction sine(int frequency, double coef);
  static SymbolicFunction cosine(int frequency, double coef);

  const std::vector<TrigTerm>& trig() const noexcept { return trig_; }
  /// poly()[k] multiplies t^k.
  const std::vector<double>& poly() const noexcept { return poly_; }

  double operator()(double t) const;
  SymbolicFunction derivative(int order = 1) const;
  SymbolicFunction antiderivative() const;
  /// Exact integral over [a, b] through the antiderivative.
  double integral(double a, double b) const;

  int max_frequency() const noexcept;
  int degree() const noexcept;
  double max_abs_coefficient() const noexcept;

  SymbolicFunction& operator+=(const SymbolicFunction& other);
  SymbolicFunction& operator*=(double c);
  friend SymbolicFunction operator+(SymbolicFunction a, const SymbolicFunction& b) { return a += b; }
  friend SymbolicFunction operator-(SymbolicFunction a, SymbolicFunction b) { return a += (b *= -1.0); }
  friend SymbolicFunction operator*(double c, SymbolicFunction f) { return f *= c; }
  friend bool operator==(const SymbolicFunction&, const SymbolicFunction&) = default;

  nlohmann::json to_json() const;
  static SymbolicFunction from_json(const nlohmann::json& j);

 private:
  void normalize();

  std::vector<TrigTerm> trig_;
  std::vector<double> poly_;
};

inline double eval(const SymbolicFunction& f, double t) { return f(t); }
inline SymbolicFunction derivative(const SymbolicFunction& f, int order) { return f.derivative(order); }

/// Library hyperparameters: trig frequencies 1..max_frequency, polynomial
/// degrees 0..max_degree, coefficients uniform on (-coef_bound, coef_bound).
struct LibraryConfig {
  int max_frequency = 3;
  int max_degree = 50;
  double coef_bound = 10.0;
  std::size_t n_functions = 10000;
  std::size_t n_points = 100;
  double t0 = 0.0;
  double t1 = 1.0;
  std::uint64_t seed = 0;
  /// When set, each basis term is kept independently with `term_probability`
  /// (at least one term survives); otherwise every basis term is drawn.
  bool sparse = false;
  double term_probability = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
  static LibraryConfig from_json(const nlohmann::json& j);
};

SymbolicFunction sample_function(const LibraryConfig& cfg, Rng& rng);

/// Sorted grid with both endpoints pinned and i.i.d. uniform interior points.
std::vector<double> sample_times(std::size_t n_points, double t0, double t1, Rng& rng);

/// Time increments with dt[0] = 0.
std::vector<double> time_deltas(std::span<const double> times);

/// One training sequence. Inputs are L x F with columns
///   order 1: x_1..x_c, t, dt
///   order 2: xdot_1..xdot_c, x_1..x_c, t, dt
/// and labels are the L x c derivatives of order `order`.
struct Example {
  std::vector<double> times;
  ad::Tensor inputs;
  ad::Tensor labels;
  std::vector<SymbolicFunction> functions;
};

struct Dataset {
  int order = 1;
  std::size_t channels = 1;
  std::vector<Example> examples;
};

/// Number of input features per time step.
std::size_t feature_count(int order, std::size_t channels);

/// Builds the feature matrix for given channel values (L x c each, row-major).
ad::Tensor build_inputs(int order, std::size_t channels, std::span<const double> times,
                        std::span<const double> values, std::span<const double> first_derivatives = {});

/// Example `index` is generated from its own stream derive_seed(cfg.seed, index).
Example make_example(const LibraryConfig& cfg, int order, std::size_t channels, std::size_t index);
Dataset make_dataset(const LibraryConfig& cfg, int order, std::size_t channels = 1);

}  // namespace ndoflow::funclib
