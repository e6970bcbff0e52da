#include "ndoflow/ops.hpp"

#include <cmath>
#include <string>

namespace ndoflow::ad {

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (!a.valid() || a.tape_ptr() != b.tape_ptr()) throw Error("operands live on different tapes");
  return a.tape();
}

enum class Broadcast { same, row, col, scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Broadcast::same;
  if (b.numel() == 1) return Broadcast::scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::col;
  throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(b.shape()) + " onto " +
                   to_string(a.shape()));
}

inline std::size_t bindex(Broadcast k, std::size_t r, std::size_t c, std::size_t cols) {
  switch (k) {
    case Broadcast::same: return r * cols + c;
    case Broadcast::row: return c;
    case Broadcast::col: return r;
    case Broadcast::scalar: return 0;
  }
  return 0;
}

Tensor like(const Tensor& t) { return Tensor({t.rows(), t.cols()}, 0.0); }

// out = f(a, b) elementwise; backward receives (a, b, out, g) and returns (da, db).
template <class F, class DF>
Var binary(const char* op, const Var& a, const Var& b, F f, DF df) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast k = broadcast_kind(av, bv, op);
  Tensor out = like(av);
  const std::size_t R = av.rows(), C = av.cols();
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      out[r * C + c] = f(av[r * C + c], bv[bindex(k, r, c, C)]);
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(op, std::move(out), {ia, ib}, [ia, ib, k, R, C, df](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    const Tensor& ov = t.value(self);
    const bool need_a = t.requires_grad(ia), need_b = t.requires_grad(ib);
    Tensor* ga = need_a ? &t.grad_buffer(ia) : nullptr;
    Tensor* gb = need_b ? &t.grad_buffer(ib) : nullptr;
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = r * C + c, j = bindex(k, r, c, C);
        const auto [da, db] = df(av[i], bv[j], ov[i], g[i]);
        if (ga) (*ga)[i] += da;
        if (gb) (*gb)[j] += db;
      }
    }
  });
}

// out = f(x) elementwise; df(x, y) is dy/dx.
template <class F, class DF>
Var unary(const char* op, const Var& x, F f, DF df) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  Tensor out = Tensor(xv.shape(), 0.0);
  const std::size_t n = xv.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(xv[i]);
  const std::size_t ix = x.id();
  return tape.record(op, std::move(out), {ix}, [ix, n, df](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    const Tensor& xv = t.value(ix);
    const Tensor& yv = t.value(self);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + to_string(av.shape()) + " x " + to_string(bv.shape()));
  }
  Tensor out = Tensor::zeros(av.rows(), bv.cols());
  out.matrix().noalias() = av.matrix() * bv.matrix();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record("matmul", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) t.grad_buffer(ia).matrix().noalias() += g.matrix() * t.value(ib).matrix().transpose();
    if (t.requires_grad(ib)) t.grad_buffer(ib).matrix().noalias() += t.value(ia).matrix().transpose() * g.matrix();
  });
}

Var affine(const Var& x, const Var& w, const Var& b) {
  Tape& tape = same_tape(x, w);
  same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw ShapeError("affine: x " + to_string(xv.shape()) + ", W " + to_string(wv.shape()) + ", b " +
                     to_string(bv.shape()));
  }
  Tensor out = Tensor::zeros(xv.rows(), wv.cols());
  out.matrix().noalias() = xv.matrix() * wv.matrix();
  out.matrix().rowwise() += bv.matrix().row(0);
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return tape.record("affine", std::move(out), {ix, iw, ib}, [ix, iw, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.requires_grad(ix)) t.grad_buffer(ix).matrix().noalias() += g.matrix() * t.value(iw).matrix().transpose();
    if (t.requires_grad(iw)) t.grad_buffer(iw).matrix().noalias() += t.value(ix).matrix().transpose() * g.matrix();
    if (t.requires_grad(ib)) t.grad_buffer(ib).matrix().row(0) += g.matrix().colwise().sum();
  });
}

Var add(const Var& a, const Var& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double, double g) { return std::pair{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double, double g) { return std::pair{g, -g}; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double, double g) { return std::pair{g * y, g * x}; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double o, double g) { return std::pair{g / y, -g * o / y}; });
}

Var neg(const Var& x) {
  return unary("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Var scale(const Var& x, double c) {
  return unary("scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(const Var& x, double c) {
  return unary("add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var elu(const Var& x, double alpha) {
  return unary(
      "elu", x, [alpha](double v) { return v > 0.0 ? v : alpha * std::expm1(v); },
      [alpha](double v, double y) { return v > 0.0 ? 1.0 : y + alpha; });
}

Var relu(const Var& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var sin(const Var& x) {
  return unary("sin", x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Var cos(const Var& x) {
  return unary("cos", x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Var exp(const Var& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var sqrt(const Var& x) {
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var square(const Var& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var abs(const Var& x) {
  return unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var reciprocal(const Var& x) {
  return unary(
      "reciprocal", x, [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

Var sum(const Var& x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.values()) s += v;
  const std::size_t ix = x.id();
  return x.tape().record("sum", Tensor::scalar(s), {ix}, [ix](Tape& t, std::size_t self) {
    const double g = t.grad_buffer(self)[0];
    for (double& v : t.grad_buffer(ix).values()) v += g;
  });
}

Var mean(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.numel() == 0) throw ShapeError("mean of an empty tensor");
  double s = 0.0;
  for (double v : xv.values()) s += v;
  const double inv_n = 1.0 / double(xv.numel());
  const std::size_t ix = x.id();
  return x.tape().record("mean", Tensor::scalar(s * inv_n), {ix}, [ix, inv_n](Tape& t, std::size_t self) {
    const double g = t.grad_buffer(self)[0] * inv_n;
    for (double& v : t.grad_buffer(ix).values()) v += g;
  });
}

Var sum_squares(const Var& x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.values()) s += v * v;
  const std::size_t ix = x.id();
  return x.tape().record("sum_squares", Tensor::scalar(s), {ix}, [ix](Tape& t, std::size_t self) {
    const double g = 2.0 * t.grad_buffer(self)[0];
    const Tensor& xv = t.value(ix);
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] += g * xv[i];
  });
}

Var row_sum(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros(xv.rows(), 1);
  out.matrix() = xv.matrix().rowwise().sum();
  const std::size_t ix = x.id();
  return x.tape().record("row_sum", std::move(out), {ix}, [ix](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    t.grad_buffer(ix).matrix().colwise() += g.matrix().col(0);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Tape& tape = parts.front().tape();
  const std::size_t R = parts.front().rows();
  std::size_t C = 0;
  std::vector<std::size_t> ids, offsets;
  for (const auto& p : parts) {
    same_tape(parts.front(), p);
    if (p.rows() != R) throw ShapeError("concat_cols: row count mismatch");
    ids.push_back(p.id());
    offsets.push_back(C);
    C += p.cols();
  }
  Tensor out = Tensor::zeros(R, C);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    out.matrix().middleCols(Eigen::Index(offsets[k]), Eigen::Index(v.cols())) = v.matrix();
  }
  return tape.record("concat_cols", std::move(out), ids, [ids, offsets](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Tensor& gk = t.grad_buffer(ids[k]);
      gk.matrix() += g.matrix().middleCols(Eigen::Index(offsets[k]), Eigen::Index(gk.cols()));
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Tape& tape = parts.front().tape();
  const std::size_t C = parts.front().cols();
  std::size_t R = 0;
  std::vector<std::size_t> ids, offsets;
  for (const auto& p : parts) {
    same_tape(parts.front(), p);
    if (p.cols() != C) throw ShapeError("concat_rows: column count mismatch");
    ids.push_back(p.id());
    offsets.push_back(R);
    R += p.rows();
  }
  Tensor out = Tensor::zeros(R, C);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    std::copy(v.data(), v.data() + v.numel(), out.data() + offsets[k] * C);
  }
  return tape.record("concat_rows", std::move(out), ids, [ids, offsets, C](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Tensor& gk = t.grad_buffer(ids[k]);
      const double* src = g.data() + offsets[k] * C;
      for (std::size_t i = 0; i < gk.numel(); ++i) gk[i] += src[i];
    }
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (begin >= end || end > xv.cols()) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     to_string(xv.shape()));
  }
  Tensor out = Tensor::zeros(xv.rows(), end - begin);
  out.matrix() = xv.matrix().middleCols(Eigen::Index(begin), Eigen::Index(end - begin));
  const std::size_t ix = x.id();
  return x.tape().record("slice_cols", std::move(out), {ix}, [ix, begin, end](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    t.grad_buffer(ix).matrix().middleCols(Eigen::Index(begin), Eigen::Index(end - begin)) += g.matrix();
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (begin >= end || end > xv.rows()) {
    throw ShapeError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     to_string(xv.shape()));
  }
  Tensor out = xv.row_block(begin, end);
  const std::size_t ix = x.id(), C = xv.cols();
  return x.tape().record("slice_rows", std::move(out), {ix}, [ix, begin, C](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    double* dst = t.grad_buffer(ix).data() + begin * C;
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
  });
}

Var linear_combination(const std::vector<std::pair<double, Var>>& terms) {
  if (terms.empty()) throw ShapeError("linear_combination of nothing");
  const Var& first = terms.front().second;
  Tape& tape = first.tape();
  Tensor out(first.value().shape(), 0.0);
  std::vector<std::size_t> ids;
  std::vector<double> coefs;
  for (const auto& [c, v] : terms) {
    same_tape(first, v);
    if (!v.value().same_shape(out)) throw ShapeError("linear_combination: shape mismatch");
    if (c == 0.0) continue;
    out.matrix() += c * v.value().matrix();
    ids.push_back(v.id());
    coefs.push_back(c);
  }
  return tape.record("linear_combination", std::move(out), ids, [ids, coefs](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) t.grad_buffer(ids[k]).matrix() += coefs[k] * g.matrix();
    }
  });
}

Var combine(const Var& base, const std::vector<std::pair<double, Var>>& terms) {
  std::vector<std::pair<double, Var>> all;
  all.reserve(terms.size() + 1);
  all.emplace_back(1.0, base);
  all.insert(all.end(), terms.begin(), terms.end());
  return linear_combination(all);
}

}  // namespace ndoflow::ad
