#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "ndoflow/autodiff.hpp"

// Differentiable primitives. Every op checks shapes, rejects non-finite
// outputs and records its vector-Jacobian product on the operands' tape.
//
// Binary elementwise ops accept a right operand that is either the same shape
// as the left one, a 1xC row, an Rx1 column or a 1x1 scalar (broadcast).
namespace ndoflow::ad {

Var matmul(const Var& a, const Var& b);
/// x * W + b with b a 1xC row, fused into one node.
Var affine(const Var& x, const Var& w, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var neg(const Var& x);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);

Var elu(const Var& x, double alpha = 1.0);
Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var sin(const Var& x);
Var cos(const Var& x);
Var exp(const Var& x);
Var sqrt(const Var& x);
Var square(const Var& x);
Var abs(const Var& x);
Var reciprocal(const Var& x);

/// Sum of all elements (scalar).
Var sum(const Var& x);
/// Mean of all elements (scalar).
Var mean(const Var& x);
/// Sum of squared elements (scalar).
Var sum_squares(const Var& x);
/// Per-row sum, Rx1.
Var row_sum(const Var& x);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
/// Columns [begin, end).
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
/// Rows [begin, end).
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);

/// base + sum_i coef_i * term_i, all operands of equal shape. Terms with a
/// zero coefficient are skipped.
Var combine(const Var& base, const std::vector<std::pair<double, Var>>& terms);
/// sum_i coef_i * term_i without a base.
Var linear_combination(const std::vector<std::pair<double, Var>>& terms);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& x) { return neg(x); }
inline Var operator*(double c, const Var& x) { return scale(x, c); }
inline Var operator*(const Var& x, double c) { return scale(x, c); }

}  // namespace ndoflow::ad
