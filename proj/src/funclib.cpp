#include "ndoflow/funclib.hpp"

#include <algorithm>
#include <cmath>

namespace ndoflow {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

}  // namespace ndoflow

namespace ndoflow::funclib {

SymbolicFunction::SymbolicFunction(std::vector<TrigTerm> trig, std::vector<double> poly)
    : trig_(std::move(trig)), poly_(std::move(poly)) {
  for (const auto& term : trig_) {
    if (term.frequency < 1) throw Error("trig term frequency must be >= 1");
  }
  normalize();
}

SymbolicFunction SymbolicFunction::constant(double c) { return SymbolicFunction({}, {c}); }

SymbolicFunction SymbolicFunction::monomial(int degree, double coef) {
  if (degree < 0) throw Error("monomial degree must be >= 0");
  std::vector<double> poly(std::size_t(degree) + 1, 0.0);
  poly.back() = coef;
  return SymbolicFunction({}, std::move(poly));
}

SymbolicFunction SymbolicFunction::sine(int frequency, double coef) {
  return SymbolicFunction({{frequency, coef, 0.0}}, {});
}

SymbolicFunction SymbolicFunction::cosine(int frequency, double coef) {
  return SymbolicFunction({{frequency, 0.0, coef}}, {});
}

void SymbolicFunction::normalize() {
  std::stable_sort(trig_.begin(), trig_.end(),
                   [](const TrigTerm& a, const TrigTerm& b) { return a.frequency < b.frequency; });
  std::vector<TrigTerm> merged;
  for (const auto& term : trig_) {
    if (!merged.empty() && merged.back().frequency == term.frequency) {
      merged.back().sin_coef += term.sin_coef;
      merged.back().cos_coef += term.cos_coef;
    } else {
      merged.push_back(term);
    }
  }
  std::erase_if(merged, [](const TrigTerm& t) { return t.sin_coef == 0.0 && t.cos_coef == 0.0; });
  trig_ = std::move(merged);
  while (!poly_.empty() && poly_.back() == 0.0) poly_.pop_back();
}

double SymbolicFunction::operator()(double t) const {
  double p = 0.0;
  for (auto it = poly_.rbegin(); it != poly_.rend(); ++it) p = p * t + *it;
  for (const auto& term : trig_) {
    const double arg = double(term.frequency) * t;
    p += term.sin_coef * std::sin(arg) + term.cos_coef * std::cos(arg);
  }
  return p;
}

SymbolicFunction SymbolicFunction::derivative(int order) const {
  if (order < 0) throw Error("derivative order must be >= 0");
  SymbolicFunction f = *this;
  for (int k = 0; k < order; ++k) {
    std::vector<TrigTerm> trig;
    trig.reserve(f.trig_.size());
    for (const auto& term : f.trig_) {
      const double w = double(term.frequency);
      trig.push_back({term.frequency, -term.cos_coef * w, term.sin_coef * w});
    }
    std::vector<double> poly;
    for (std::size_t d = 1; d < f.poly_.size(); ++d) poly.push_back(f.poly_[d] * double(d));
    f = SymbolicFunction(std::move(trig), std::move(poly));
  }
  return f;
}

SymbolicFunction SymbolicFunction::antiderivative() const {
  std::vector<TrigTerm> trig;
  trig.reserve(trig_.size());
  for (const auto& term : trig_) {
    const double w = double(term.frequency);
    trig.push_back({term.frequency, term.cos_coef / w, -term.sin_coef / w});
  }
  std::vector<double> poly(poly_.size() + 1, 0.0);
  for (std::size_t d = 0; d < poly_.size(); ++d) poly[d + 1] = poly_[d] / double(d + 1);
  return SymbolicFunction(std::move(trig), std::move(poly));
}

double SymbolicFunction::integral(double a, double b) const {
  const SymbolicFunction F = antiderivative();
  return F(b) - F(a);
}

int SymbolicFunction::max_frequency() const noexcept { return trig_.empty() ? 0 : trig_.back().frequency; }

int SymbolicFunction::degree() const noexcept { return poly_.empty() ? 0 : int(poly_.size()) - 1; }

double SymbolicFunction::max_abs_coefficient() const noexcept {
  double m = 0.0;
  for (const auto& term : trig_) m = std::max({m, std::abs(term.sin_coef), std::abs(term.cos_coef)});
  for (double c : poly_) m = std::max(m, std::abs(c));
  return m;
}

SymbolicFunction& SymbolicFunction::operator+=(const SymbolicFunction& other) {
  trig_.insert(trig_.end(), other.trig_.begin(), other.trig_.end());
  if (poly_.size() < other.poly_.size()) poly_.resize(other.poly_.size(), 0.0);
  for (std::size_t d = 0; d < other.poly_.size(); ++d) poly_[d] += other.poly_[d];
  normalize();
  return *this;
}

SymbolicFunction& SymbolicFunction::operator*=(double c) {
  for (auto& term : trig_) {
    term.sin_coef *= c;
    term.cos_coef *= c;
  }
  for (double& p : poly_) p *= c;
  normalize();
  return *this;
}

nlohmann::json SymbolicFunction::to_json() const {
  nlohmann::json trig = nlohmann::json::array();
  for (const auto& t : trig_) trig.push_back({t.frequency, t.sin_coef, t.cos_coef});
  return {{"trig", trig}, {"poly", poly_}};
}

SymbolicFunction SymbolicFunction::from_json(const nlohmann::json& j) {
  std::vector<TrigTerm> trig;
  for (const auto& t : j.at("trig")) trig.push_back({t.at(0).get<int>(), t.at(1).get<double>(), t.at(2).get<double>()});
  return SymbolicFunction(std::move(trig), j.at("poly").get<std::vector<double>>());
}

void LibraryConfig::validate() const {
  if (max_frequency < 0 || max_degree < 0) throw Error("library bounds must be non-negative");
  if (!(coef_bound > 0.0)) throw Error("library coefficient bound must be positive");
  if (n_points < 2) throw Error("library trajectories need at least 2 points");
  if (!(t0 < t1)) throw Error("library interval must satisfy t0 < t1");
  if (sparse && !(term_probability > 0.0 && term_probability <= 1.0)) {
    throw Error("term_probability must lie in (0, 1]");
  }
}

nlohmann::json LibraryConfig::to_json() const {
  return {{"max_frequency", max_frequency}, {"max_degree", max_degree}, {"coef_bound", coef_bound},
          {"n_functions", n_functions},     {"n_points", n_points},     {"t0", t0},
          {"t1", t1},                       {"seed", seed},             {"sparse", sparse},
          {"term_probability", term_probability}};
}

LibraryConfig LibraryConfig::from_json(const nlohmann::json& j) {
  LibraryConfig c;
  c.max_frequency = j.value("max_frequency", c.max_frequency);
  c.max_degree = j.value("max_degree", c.max_degree);
  c.coef_bound = j.value("coef_bound", c.coef_bound);
  c.n_functions = j.value("n_functions", c.n_functions);
  c.n_points = j.value("n_points", c.n_points);
  c.t0 = j.value("t0", c.t0);
  c.t1 = j.value("t1", c.t1);
  c.seed = j.value("seed", c.seed);
  c.sparse = j.value("sparse", c.sparse);
  c.term_probability = j.value("term_probability", c.term_probability);
  c.validate();
  return c;
}

namespace {

double draw_coefficient(double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  double v;
  do {
    v = u(rng);
  } while (std::abs(v) >= bound);
  return v;
}

}  // namespace

SymbolicFunction sample_function(const LibraryConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t n_trig = std::size_t(cfg.max_frequency);
  const std::size_t n_poly = std::size_t(cfg.max_degree) + 1;
  // Basis order: sin 1..P, cos 1..P, t^0..t^Q.
  const std::size_t n_basis = 2 * n_trig + n_poly;
  std::vector<bool> keep(n_basis, true);
  if (cfg.sparse) {
    std::bernoulli_distribution coin(cfg.term_probability);
    bool any = false;
    for (std::size_t b = 0; b < n_basis; ++b) {
      keep[b] = coin(rng);
      any = any || keep[b];
    }
    if (!any) {
      std::uniform_int_distribution<std::size_t> pick(0, n_basis - 1);
      keep[pick(rng)] = true;
    }
  }
  std::vector<TrigTerm> trig;
  for (std::size_t i = 0; i < n_trig; ++i) {
    const double a = keep[i] ? draw_coefficient(cfg.coef_bound, rng) : 0.0;
    const double b = keep[n_trig + i] ? draw_coefficient(cfg.coef_bound, rng) : 0.0;
    trig.push_back({int(i) + 1, a, b});
  }
  std::vector<double> poly(n_poly, 0.0);
  for (std::size_t d = 0; d < n_poly; ++d) {
    if (keep[2 * n_trig + d]) poly[d] = draw_coefficient(cfg.coef_bound, rng);
  }
  return SymbolicFunction(std::move(trig), std::move(poly));
}

std::vector<double> sample_times(std::size_t n_points, double t0, double t1, Rng& rng) {
  if (n_points < 2) throw Error("sample_times needs at least 2 points");
  if (!(t0 < t1)) throw Error("sample_times needs t0 < t1");
  std::uniform_real_distribution<double> u(t0, t1);
  std::vector<double> interior(n_points - 2);
  for (double& t : interior) t = u(rng);
  for (;;) {
    std::sort(interior.begin(), interior.end());
    bool clean = true;
    for (std::size_t i = 0; i < interior.size(); ++i) {
      const double prev = i == 0 ? t0 : interior[i - 1];
      if (!(interior[i] > prev) || !(interior[i] < t1)) {
        interior[i] = u(rng);
        clean = false;
      }
    }
    if (clean) break;
  }
  std::vector<double> times;
  times.reserve(n_points);
  times.push_back(t0);
  times.insert(times.end(), interior.begin(), interior.end());
  times.push_back(t1);
  return times;
}

std::vector<double> time_deltas(std::span<const double> times) {
  std::vector<double> dt(times.size(), 0.0);
  for (std::size_t i = 1; i < times.size(); ++i) dt[i] = times[i] - times[i - 1];
  return dt;
}

std::size_t feature_count(int order, std::size_t channels) {
  if (order != 1 && order != 2) throw Error("derivative order must be 1 or 2");
  return std::size_t(order) * channels + 2;
}

ad::Tensor build_inputs(int order, std::size_t channels, std::span<const double> times,
                        std::span<const double> values, std::span<const double> first_derivatives) {
  const std::size_t L = times.size();
  const std::size_t F = feature_count(order, channels);
  if (values.size() != L * channels) throw ShapeError("build_inputs: values do not match times x channels");
  if (order == 2 && first_derivatives.size() != L * channels) {
    throw ShapeError("build_inputs: order-2 inputs need first derivatives for every channel");
  }
  const auto dt = time_deltas(times);
  ad::Tensor in = ad::Tensor::zeros(L, F);
  for (std::size_t i = 0; i < L; ++i) {
    std::size_t col = 0;
    if (order == 2) {
      for (std::size_t c = 0; c < channels; ++c) in.at(i, col++) = first_derivatives[i * channels + c];
    }
    for (std::size_t c = 0; c < channels; ++c) in.at(i, col++) = values[i * channels + c];
    in.at(i, col++) = times[i];
    in.at(i, col++) = dt[i];
  }
  return in;
}

Example make_example(const LibraryConfig& cfg, int order, std::size_t channels, std::size_t index) {
  if (order != 1 && order != 2) throw Error("derivative order must be 1 or 2");
  Rng rng(derive_seed(cfg.seed, index));
  Example ex;
  for (std::size_t c = 0; c < channels; ++c) ex.functions.push_back(sample_function(cfg, rng));
  ex.times = sample_times(cfg.n_points, cfg.t0, cfg.t1, rng);
  const std::size_t L = ex.times.size();
  std::vector<double> values(L * channels), first(L * channels);
  ex.labels = ad::Tensor::zeros(L, channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const SymbolicFunction d1 = ex.functions[c].derivative(1);
    const SymbolicFunction label = ex.functions[c].derivative(order);
    for (std::size_t i = 0; i < L; ++i) {
      values[i * channels + c] = ex.functions[c](ex.times[i]);
      first[i * channels + c] = d1(ex.times[i]);
      ex.labels.at(i, c) = label(ex.times[i]);
    }
  }
  ex.inputs = build_inputs(order, channels, ex.times, values, order == 2 ? std::span<const double>(first)
                                                                           : std::span<const double>());
  return ex;
}

Dataset make_dataset(const LibraryConfig& cfg, int order, std::size_t channels) {
  cfg.validate();
  Dataset ds;
  ds.order = order;
  ds.channels = channels;
  ds.examples.reserve(cfg.n_functions);
  for (std::size_t i = 0; i < cfg.n_functions; ++i) ds.examples.push_back(make_example(cfg, order, channels, i));
  return ds;
}

}  // namespace ndoflow::funclib
