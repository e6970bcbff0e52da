#include "ndoflow/odeint.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "ndoflow/ops.hpp"

namespace ndoflow::ode {

std::string to_string(Method method) { return method == Method::rk4 ? "rk4" : "dopri5"; }

Method parse_method(const std::string& name) {
  if (name == "rk4") return Method::rk4;
  if (name == "dopri5") return Method::dopri5;
  throw Error("unknown solver method '" + name + "'");
}

void SolverConfig::validate() const {
  if (!(rtol > 0.0) || !(atol > 0.0)) throw Error("solver tolerances must be positive");
  if (max_steps == 0) throw Error("solver max_steps must be positive");
  if (method == Method::rk4 && !(step_size > 0.0)) throw Error("rk4 requires a positive step_size");
  if (!(min_scale > 0.0) || !(max_scale >= 1.0) || !(safety > 0.0)) throw Error("invalid step-scale factors");
}

Trajectory::Trajectory(std::size_t dim) : dim_(dim) {}

Trajectory::Trajectory(std::vector<double> times, std::vector<double> values, std::size_t dim)
    : dim_(dim), times_(std::move(times)), values_(std::move(values)) {
  if (values_.size() != times_.size() * dim_) throw ShapeError("trajectory values do not match times x dim");
}

std::vector<double> Trajectory::component(std::size_t d) const {
  std::vector<double> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = at(i, d);
  return out;
}

void Trajectory::push_back(double t, std::span<const double> state) {
  if (state.size() != dim_) throw ShapeError("trajectory state has wrong dimension");
  times_.push_back(t);
  values_.insert(values_.end(), state.begin(), state.end());
}

void Trajectory::validate() const {
  if (values_.size() != times_.size() * dim_) throw ShapeError("trajectory values do not match times x dim");
  for (std::size_t i = 1; i < times_.size(); ++i) {
    if (!(times_[i] > times_[i - 1])) {
      throw Error("trajectory times are not strictly increasing at index " + std::to_string(i));
    }
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw NumericError("trajectory contains a non-finite state");
  }
}

SolverError::SolverError(const std::string& what, double time)
    : Error(what + " at t=" + std::to_string(time)), time_(time) {}

namespace {

struct NonFiniteField {};

// Dormand-Prince 5(4) tableau.
constexpr std::array<double, 6> kC = {1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr std::array<std::array<double, 6>, 6> kA = {{
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
}};
constexpr std::array<double, 7> kErr = {
    35.0 / 384 - 1951.0 / 21600, 0.0, 500.0 / 1113 - 22642.0 / 50085, 125.0 / 192 - 451.0 / 720,
    -2187.0 / 6784 + 12231.0 / 42400, 11.0 / 84 - 649.0 / 6300, -1.0 / 60};
// Midpoint weights for the quartic dense-output interpolant.
constexpr std::array<double, 7> kMid = {
    6025192743.0 / 30085553152 / 2,     0.0, 51252292925.0 / 65400821598 / 2, -2691868925.0 / 45128329728 / 2,
    187940372067.0 / 1594534317056 / 2, -1776094331.0 / 19743644256 / 2, 11237099.0 / 235043384 / 2};

using Terms = std::vector<std::pair<double, std::size_t>>;

// Plain double states.
struct VectorOps {
  using State = std::vector<double>;
  const Field& field;
  SolveStats& stats;

  State eval(double t, const State& x) {
    ++stats.evaluations;
    State dx(x.size(), 0.0);
    field(t, x, dx);
    for (double v : dx) {
      if (!std::isfinite(v)) throw NonFiniteField{};
    }
    return dx;
  }

  // sum_j coef_j * states[idx_j]
  State lincomb(const std::vector<std::pair<double, const State*>>& terms) {
    State out(terms.front().second->size(), 0.0);
    for (const auto& [c, s] : terms) {
      if (c == 0.0) continue;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * (*s)[i];
    }
    for (double v : out) {
      if (!std::isfinite(v)) throw NonFiniteField{};
    }
    return out;
  }

  std::span<const double> values(const State& s) const { return s; }
  std::vector<double> value_copy(const State& s) const { return s; }
};

// Tape-recorded states.
struct VarOps {
  using State = ad::Var;
  const VarField& field;
  SolveStats& stats;

  State eval(double t, const State& x) {
    ++stats.evaluations;
    try {
      ad::Var dx = field(t, x);
      if (dx.rows() != x.rows() || dx.cols() != x.cols()) {
        throw ShapeError("vector field output shape does not match the state");
      }
      return dx;
    } catch (const NumericError&) {
      throw NonFiniteField{};
    }
  }

  State lincomb(const std::vector<std::pair<double, const State*>>& terms) {
    std::vector<std::pair<double, ad::Var>> vt;
    vt.reserve(terms.size());
    for (const auto& [c, s] : terms) vt.emplace_back(c, *s);
    try {
      return ad::linear_combination(vt);
    } catch (const NumericError&) {
      throw NonFiniteField{};
    }
  }

  std::span<const double> values(const State& s) const { return s.value().values(); }
};

double rms_error_norm(std::span<const double> err, std::span<const double> y0, std::span<const double> y1,
                      const SolverConfig& cfg) {
  double s = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    const double scale = cfg.atol + cfg.rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = err[i] / scale;
    s += r * r;
  }
  return err.empty() ? 0.0 : std::sqrt(s / double(err.size()));
}

void check_queries(std::span<const double> query_times, double t0) {
  for (std::size_t i = 0; i < query_times.size(); ++i) {
    if (!std::isfinite(query_times[i])) throw Error("query times must be finite");
    if (query_times[i] < t0) throw Error("query times must not precede t0");
    if (i && query_times[i] < query_times[i - 1]) throw Error("query times must be sorted");
  }
}

// Hairer-Norsett-Wanner starting step, evaluated on plain values.
template <class PlainEval>
double select_initial_step(PlainEval&& f, double t0, const std::vector<double>& y0, const std::vector<double>& f0,
                           const SolverConfig& cfg) {
  auto norm = [&](const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double r = v[i] / (cfg.atol + std::abs(y0[i]) * cfg.rtol);
      s += r * r;
    }
    return v.empty() ? 0.0 : std::sqrt(s / double(v.size()));
  };
  const double d0 = norm(y0), d1 = norm(f0);
  const double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  std::vector<double> y1(y0.size());
  for (std::size_t i = 0; i < y0.size(); ++i) y1[i] = y0[i] + h0 * f0[i];
  std::vector<double> f1;
  try {
    f1 = f(t0 + h0, y1);
  } catch (const NonFiniteField&) {
    return h0 * 1e-3;
  }
  std::vector<double> df(y0.size());
  for (std::size_t i = 0; i < y0.size(); ++i) df[i] = f1[i] - f0[i];
  const double d2 = norm(df) / h0;
  const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                             : std::pow(0.01 / std::max(d1, d2), 1.0 / 5.0);
  return std::min(100.0 * h0, h1);
}

template <class Ops, class PlainEval>
std::vector<typename Ops::State> solve_dopri5(Ops& ops, PlainEval&& plain_eval, const typename Ops::State& x0,
                                              double t0, std::span<const double> query_times,
                                              const SolverConfig& cfg) {
  using State = typename Ops::State;
  std::vector<State> out;
  out.reserve(query_times.size());
  std::size_t q = 0;
  while (q < query_times.size() && query_times[q] == t0) {
    out.push_back(x0);
    ++q;
  }
  if (q == query_times.size()) return out;
  const double t_end = query_times.back();

  State y = x0;
  State f0;
  try {
    f0 = ops.eval(t0, y);
  } catch (const NonFiniteField&) {
    throw SolverError("non-finite vector field output", t0);
  }

  double h = cfg.initial_step;
  if (!(h > 0.0)) {
    const auto yv = std::vector<double>(ops.values(y).begin(), ops.values(y).end());
    const auto fv = std::vector<double>(ops.values(f0).begin(), ops.values(f0).end());
    h = select_initial_step(plain_eval, t0, yv, fv, cfg);
  }

  double t = t0;
  std::size_t attempts = 0;
  bool saw_non_finite = false;
  while (q < query_times.size()) {
    if (attempts++ >= cfg.max_steps) {
      throw SolverError("max_steps (" + std::to_string(cfg.max_steps) + ") exceeded", t);
    }
    const bool last = t + h >= t_end;
    if (last) h = t_end - t;
    if (h <= 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t))) {
      throw SolverError(saw_non_finite ? "non-finite vector field output" : "step size underflow", t);
    }

    std::array<State, 7> k;
    k[0] = f0;
    State y1;
    double err_norm = 0.0;
    bool finite = true;
    try {
      for (std::size_t s = 0; s < 5; ++s) {
        std::vector<std::pair<double, const State*>> terms{{1.0, &y}};
        for (std::size_t j = 0; j <= s; ++j) terms.emplace_back(h * kA[s][j], &k[j]);
        State ys = ops.lincomb(terms);
        k[s + 1] = ops.eval(t + kC[s] * h, ys);
      }
      {
        std::vector<std::pair<double, const State*>> terms{{1.0, &y}};
        for (std::size_t j = 0; j < 6; ++j) terms.emplace_back(h * kA[5][j], &k[j]);
        y1 = ops.lincomb(terms);
      }
      const double t_new_stage = last ? t_end : t + h;
      k[6] = ops.eval(t_new_stage, y1);
      std::vector<double> err(ops.values(y).size(), 0.0);
      for (std::size_t j = 0; j < 7; ++j) {
        if (kErr[j] == 0.0) continue;
        const auto kv = ops.values(k[j]);
        for (std::size_t i = 0; i < err.size(); ++i) err[i] += h * kErr[j] * kv[i];
      }
      err_norm = rms_error_norm(err, ops.values(y), ops.values(y1), cfg);
      finite = std::isfinite(err_norm);
    } catch (const NonFiniteField&) {
      finite = false;
    }

    if (!finite) {
      saw_non_finite = true;
      h *= cfg.min_scale;
      continue;
    }

    const double factor = err_norm == 0.0
                              ? cfg.max_scale
                              : std::clamp(cfg.safety * std::pow(err_norm, -1.0 / 5.0), cfg.min_scale, cfg.max_scale);
    if (err_norm > 1.0) {
      h *= std::min(factor, 1.0);
      continue;
    }

    const double t_new = last ? t_end : t + h;
    while (q < query_times.size() && query_times[q] <= t_new) {
      const double tq = query_times[q];
      if (tq == t_new) {
        out.push_back(y1);
      } else {
        const double x = (tq - t) / h;
        const double x2 = x * x, x3 = x2 * x, x4 = x3 * x;
        const double w_y0 = 1.0 - 11.0 * x2 + 18.0 * x3 - 8.0 * x4;
        const double w_y1 = -5.0 * x2 + 14.0 * x3 - 8.0 * x4;
        const double w_mid = 16.0 * x2 - 32.0 * x3 + 16.0 * x4;
        const double w_f0 = x - 4.0 * x2 + 5.0 * x3 - 2.0 * x4;
        const double w_f1 = x2 - 3.0 * x3 + 2.0 * x4;
        std::vector<std::pair<double, const State*>> terms{{w_y0 + w_mid, &y}, {w_y1, &y1}};
        for (std::size_t j = 0; j < 7; ++j) {
          double c = h * w_mid * kMid[j];
          if (j == 0) c += h * w_f0;
          if (j == 6) c += h * w_f1;
          terms.emplace_back(c, &k[j]);
        }
        try {
          out.push_back(ops.lincomb(terms));
        } catch (const NonFiniteField&) {
          throw SolverError("non-finite interpolated state", tq);
        }
      }
      ++q;
    }
    t = t_new;
    y = y1;
    f0 = k[6];
    saw_non_finite = false;
    ops.stats.accepted++;
    h *= factor;
  }
  ops.stats.rejected = attempts - ops.stats.accepted;
  return out;
}

template <class Ops>
std::vector<typename Ops::State> solve_rk4(Ops& ops, const typename Ops::State& x0, double t0,
                                           std::span<const double> query_times, const SolverConfig& cfg) {
  using State = typename Ops::State;
  std::vector<State> out;
  out.reserve(query_times.size());
  State y = x0;
  double t = t0;
  std::size_t steps = 0;
  for (double tq : query_times) {
    const double span = tq - t;
    if (span > 0.0) {
      const auto n = std::max<std::size_t>(1, std::size_t(std::ceil(span / cfg.step_size - 1e-9)));
      const double h = span / double(n);
      for (std::size_t s = 0; s < n; ++s) {
        if (steps++ >= cfg.max_steps) throw SolverError("max_steps exceeded", t);
        const double ts = t + double(s) * h;
        try {
          State k1 = ops.eval(ts, y);
          State k2 = ops.eval(ts + 0.5 * h, ops.lincomb({{1.0, &y}, {0.5 * h, &k1}}));
          State k3 = ops.eval(ts + 0.5 * h, ops.lincomb({{1.0, &y}, {0.5 * h, &k2}}));
          State k4 = ops.eval(ts + h, ops.lincomb({{1.0, &y}, {h, &k3}}));
          y = ops.lincomb({{1.0, &y}, {h / 6.0, &k1}, {h / 3.0, &k2}, {h / 3.0, &k3}, {h / 6.0, &k4}});
        } catch (const NonFiniteField&) {
          throw SolverError("non-finite vector field output", ts);
        }
        ops.stats.accepted++;
      }
      t = tq;
    }
    out.push_back(y);
  }
  return out;
}

}  // namespace

Trajectory integrate(const Field& field, std::span<const double> x0, double t0,
                     std::span<const double> query_times, const SolverConfig& cfg, SolveStats* stats) {
  cfg.validate();
  check_queries(query_times, t0);
  SolveStats local;
  VectorOps ops{field, stats ? *stats : local};
  const std::vector<double> y0(x0.begin(), x0.end());
  for (double v : y0) {
    if (!std::isfinite(v)) throw SolverError("non-finite initial state", t0);
  }
  std::vector<std::vector<double>> states;
  if (cfg.method == Method::rk4) {
    states = solve_rk4(ops, y0, t0, query_times, cfg);
  } else {
    auto plain = [&](double t, const std::vector<double>& x) { return ops.eval(t, x); };
    states = solve_dopri5(ops, plain, y0, t0, query_times, cfg);
  }
  Trajectory traj(x0.size());
  for (std::size_t i = 0; i < states.size(); ++i) traj.push_back(query_times[i], states[i]);
  return traj;
}

SolverConfig reference_config() {
  SolverConfig cfg;
  cfg.method = Method::dopri5;
  cfg.rtol = 1e-10;
  cfg.atol = 1e-12;
  cfg.max_steps = 5'000'000;
  return cfg;
}

Trajectory reference_solve(const Field& field, std::span<const double> x0, double t0,
                           std::span<const double> query_times) {
  return integrate(field, x0, t0, query_times, reference_config());
}

std::vector<ad::Var> integrate_with_grad(const VarField& field, const ad::Var& x0, double t0,
                                         std::span<const double> query_times, const SolverConfig& cfg,
                                         SolveStats* stats) {
  cfg.validate();
  check_queries(query_times, t0);
  SolveStats local;
  VarOps ops{field, stats ? *stats : local};
  if (cfg.method == Method::rk4) return solve_rk4(ops, x0, t0, query_times, cfg);

  const std::size_t rows = x0.rows(), cols = x0.cols();
  // Step-size selection probes the field on a scratch tape so that the
  // caller's graph only holds the stages actually used.
  auto plain = [&](double t, const std::vector<double>& x) {
    ad::Tape scratch;
    ad::Var xs = scratch.constant(ad::Tensor({rows, cols}, x));
    ad::Var dx;
    try {
      dx = field(t, xs);
    } catch (const NumericError&) {
      throw NonFiniteField{};
    }
    return std::vector<double>(dx.value().values().begin(), dx.value().values().end());
  };
  return solve_dopri5(ops, plain, x0, t0, query_times, cfg);
}

}  // namespace ndoflow::ode
