#pragma once

#include <cstddef>

#include "ndoflow/autodiff.hpp"

namespace ndoflow::ad {

/// One unidirectional LSTM layer over a batch of equal-length sequences,
/// recorded as a single tape node with hand-written backpropagation through time.
///
/// `x` is (L*B) x F in time-major order: row t*B + b holds step t of sequence b.
/// Weights: w_ih F x 4H, w_hh H x 4H, bias 1 x 4H, gate blocks ordered i, f, g, o.
/// Returns (L*B) x H hidden states in the same row order. When `reverse` is set
/// the recurrence runs from t = L-1 down to 0. Initial h and c are zero.
Var lstm_layer(const Var& x, std::size_t batch, const Var& w_ih, const Var& w_hh, const Var& bias,
               bool reverse = false);

}  // namespace ndoflow::ad
