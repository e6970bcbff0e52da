#include "ndoflow/bound.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ndoflow::ndo {

using funclib::SymbolicFunction;

double rho(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("rho: sample counts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

std::vector<double> uniform_grid(double t0, double t1, std::size_t n_intervals) {
  if (n_intervals == 0) throw Error("uniform_grid needs at least one interval");
  if (!(t0 < t1)) throw Error("uniform_grid needs t0 < t1");
  std::vector<double> t(n_intervals + 1);
  for (std::size_t i = 0; i <= n_intervals; ++i) t[i] = t0 + (t1 - t0) * double(i) / double(n_intervals);
  t.back() = t1;
  return t;
}

double simpson(const std::function<double(double)>& f, double a, double b, std::size_t intervals) {
  if (intervals < 2) intervals = 2;
  if (intervals % 2 == 1) ++intervals;
  const double h = (b - a) / double(intervals);
  double s = f(a) + f(b);
  for (std::size_t i = 1; i < intervals; ++i) s += (i % 2 == 1 ? 4.0 : 2.0) * f(a + h * double(i));
  return s * h / 3.0;
}

double trapezoid(const SymbolicFunction& g, double a, double b, std::size_t n_intervals) {
  const auto t = uniform_grid(a, b, n_intervals);
  double s = 0.5 * (g(t.front()) + g(t.back()));
  for (std::size_t i = 1; i + 1 < t.size(); ++i) s += g(t[i]);
  return s * (b - a) / double(n_intervals);
}

double max_abs(const SymbolicFunction& f, double a, double b, std::size_t points) {
  double m = 0.0;
  for (double t : uniform_grid(a, b, points - 1)) m = std::max(m, std::abs(f(t)));
  return m;
}

bool TrapezoidCheck::holds() const {
  return lhs <= rhs * (1.0 + 1e-9) + 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, rhs);
}

TrapezoidCheck trapezoid_error_check(const SymbolicFunction& g, std::size_t n_intervals, double t0, double t1) {
  const double exact = g.integral(t0, t1);
  const double width = t1 - t0;
  TrapezoidCheck c;
  c.lhs = std::abs(exact - trapezoid(g, t0, t1, n_intervals));
  c.rhs = width * width * width * max_abs(g.derivative(2), t0, t1) / (12.0 * double(n_intervals) * double(n_intervals));
  return c;
}

namespace {

std::vector<double> sample(const SymbolicFunction& f, std::span<const double> t) {
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) v[i] = f(t[i]);
  return v;
}

std::vector<double> ndo_derivative(const NdoModel& model, const SymbolicFunction& f, std::span<const double> t) {
  if (model.order() != 1 || model.channels() != 1) throw Error("bound checks need a single-channel order-1 NDO");
  const auto values = sample(f, t);
  const ad::Tensor d = estimate(model, t, ad::Tensor::column(values));
  return {d.values().begin(), d.values().end()};
}

}  // namespace

double estimate_lipschitz(const NdoModel& model, std::span<const BoundProbe> probes, std::size_t n_intervals,
                          double t0, double t1) {
  const auto t = uniform_grid(t0, t1, n_intervals);
  double best = 0.0;
  for (const auto& p : probes) {
    const double dist = rho(sample(p.h, t), sample(p.z, t));
    if (dist == 0.0) continue;
    best = std::max(best, rho(ndo_derivative(model, p.h, t), ndo_derivative(model, p.z, t)) / dist);
  }
  return best;
}

BoundReport verify_bound(const NdoModel& model, const SymbolicFunction& h, const SymbolicFunction& z,
                         std::size_t n_intervals, double t0, double t1, double lipschitz) {
  if (lipschitz < 0.0) throw Error("Lipschitz estimate must be non-negative");
  const auto t = uniform_grid(t0, t1, n_intervals);
  const SymbolicFunction e = z - h;
  const SymbolicFunction de = e.derivative(1);
  const std::size_t dense = std::max<std::size_t>(20000, 10 * n_intervals);
  const double width = t1 - t0;

  BoundReport r;
  r.lipschitz = lipschitz;
  r.term_lipschitz = lipschitz * simpson([&](double s) { return std::abs(e(s)); }, t0, t1, dense);
  r.term_derivative_gap = simpson([&](double s) { return std::abs(de(s)); }, t0, t1, dense);
  r.m = lipschitz * max_abs(e.derivative(2), t0, t1) + max_abs(e.derivative(3), t0, t1);
  r.term_discretization = width * width * width * r.m / (12.0 * double(n_intervals) * double(n_intervals));
  r.term_train_residual = rho(ndo_derivative(model, z, t), sample(z.derivative(1), t));
  r.total = r.term_lipschitz + r.term_derivative_gap + r.term_discretization + r.term_train_residual;
  r.observed = rho(ndo_derivative(model, h, t), sample(h.derivative(1), t));
  return r;
}

BoundReport verify_bound(const NdoModel& model, const SymbolicFunction& h, const SymbolicFunction& z,
                         std::size_t n_intervals, double t0, double t1, std::span<const BoundProbe> probes) {
  std::vector<BoundProbe> all(probes.begin(), probes.end());
  all.push_back({h, z});
  return verify_bound(model, h, z, n_intervals, t0, t1, estimate_lipschitz(model, all, n_intervals, t0, t1));
}

std::vector<BoundProbe> make_probe_suite(const funclib::LibraryConfig& library, std::size_t n_pairs,
                                         std::uint64_t seed, double min_fraction, double max_fraction) {
  if (!(min_fraction > 0.0 && min_fraction <= max_fraction)) throw Error("invalid probe perturbation range");
  const auto t = uniform_grid(library.t0, library.t1, 999);
  auto rms = [&](const SymbolicFunction& f) {
    double s = 0.0;
    for (double v : sample(f, t)) s += v * v;
    return std::sqrt(s / double(t.size()));
  };
  std::vector<BoundProbe> probes;
  Rng rng(seed);
  std::uniform_real_distribution<double> frac(std::log(min_fraction), std::log(max_fraction));
  for (std::size_t i = 0; i < n_pairs; ++i) {
    SymbolicFunction z = funclib::make_example(library, 1, 1, i % library.n_functions).functions.front();
    SymbolicFunction g = funclib::sample_function(library, rng);
    const double gz = rms(z), gg = rms(g);
    const double amount = std::exp(frac(rng)) * (gz > 0.0 ? gz : 1.0);
    if (gg > 0.0) g *= amount / gg;
    probes.push_back({z + g, std::move(z)});
  }
  return probes;
}

}  // namespace ndoflow::ndo
