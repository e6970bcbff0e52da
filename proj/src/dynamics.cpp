#include "ndoflow/dynamics.hpp"

#include <algorithm>
#include <cmath>

namespace ndoflow::dynamics {

std::string to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::spiral: return "spiral";
    case SystemKind::oscillator: return "oscillator";
    case SystemKind::three_body: return "three_body";
    case SystemKind::stiff1: return "stiff1";
    case SystemKind::stiff2: return "stiff2";
  }
  throw Error("unknown system kind");
}

SystemKind parse_system_kind(const std::string& name) {
  for (auto k : {SystemKind::spiral, SystemKind::oscillator, SystemKind::three_body, SystemKind::stiff1,
                 SystemKind::stiff2}) {
    if (to_string(k) == name) return k;
  }
  throw Error("unknown system kind '" + name + "'");
}

std::size_t state_dim(SystemKind kind) {
  switch (kind) {
    case SystemKind::spiral:
    case SystemKind::oscillator: return 2;
    case SystemKind::three_body: return 18;
    case SystemKind::stiff1:
    case SystemKind::stiff2: return 1;
  }
  throw Error("unknown system kind");
}

std::vector<double> SystemSpec::default_initial_state() const {
  switch (kind) {
    case SystemKind::spiral: return {2.0, 0.0};
    case SystemKind::oscillator: return {1.0, -gamma};
    case SystemKind::three_body: {
      // Perturbed figure-eight choreography.
      const double rx = 0.97000436, ry = -0.24308753, rz = 0.01;
      const double vx = -0.93240737, vy = -0.86473146;
      return {rx,  ry,  rz,  -rx, -ry, -rz, 0.0, 0.0, 0.0,
              -vx / 2, -vy / 2, 0.005, -vx / 2, -vy / 2, -0.005, vx, vy, 0.0};
    }
    case SystemKind::stiff1:
    case SystemKind::stiff2: return {0.0};
  }
  throw Error("unknown system kind");
}

SystemSpec SystemSpec::defaults(SystemKind kind) {
  SystemSpec s;
  s.kind = kind;
  switch (kind) {
    case SystemKind::spiral:
      s.t_train = 5.0;
      s.t_test = 10.0;
      break;
    case SystemKind::oscillator:
      s.t_train = 10.0;
      s.t_test = 20.0;
      s.trajectories = 30;
      break;
    case SystemKind::three_body:
      s.t_train = 1.0;
      s.t_test = 2.0;
      break;
    case SystemKind::stiff1:
    case SystemKind::stiff2:
      s.t_train = 15.0;
      s.t_test = 25.0;
      s.n_train = 120;
      s.train_grid = GridKind::uniform;
      break;
  }
  return s;
}

void SystemSpec::validate() const {
  if (!(t0 < t_train && t_train < t_test)) throw Error("system intervals must satisfy t0 < t_train < t_test");
  if (n_train < 2 || n_test < 2) throw Error("system grids need at least 2 points");
  if (sigma < 0.0) throw Error("noise sigma must be non-negative");
  if (trajectories == 0) throw Error("at least one trajectory is required");
  if (!initial_state.empty() && initial_state.size() != dim()) {
    throw Error("initial_state has " + std::to_string(initial_state.size()) + " components, expected " +
                std::to_string(dim()));
  }
  if (kind == SystemKind::three_body && masses.size() != 3) throw Error("three-body needs three masses");
  if (trajectories > 1 && !(ic_low < ic_high)) throw Error("ic_low must be below ic_high");
}

nlohmann::json SystemSpec::to_json() const {
  nlohmann::json j = {{"kind", to_string(kind)},
                      {"t0", t0},
                      {"t_train", t_train},
                      {"t_test", t_test},
                      {"n_train", n_train},
                      {"n_test", n_test},
                      {"train_grid", train_grid == GridKind::uniform ? "uniform" : "irregular"},
                      {"sigma", sigma},
                      {"trajectories", trajectories},
                      {"ic_low", ic_low},
                      {"ic_high", ic_high}};
  if (!initial_state.empty()) j["initial_state"] = initial_state;
  switch (kind) {
    case SystemKind::spiral: j["params"] = {{"a", a}, {"b", b}, {"c", c}, {"d", d}}; break;
    case SystemKind::oscillator: j["params"] = {{"gamma", gamma}, {"omega", omega}}; break;
    case SystemKind::three_body: j["params"] = {{"gravity", gravity}, {"masses", masses}}; break;
    default: break;
  }
  return j;
}

SystemSpec SystemSpec::from_json(const nlohmann::json& j) {
  SystemSpec s = defaults(parse_system_kind(j.at("kind").get<std::string>()));
  s.t0 = j.value("t0", s.t0);
  s.t_train = j.value("t_train", s.t_train);
  s.t_test = j.value("t_test", s.t_test);
  s.n_train = j.value("n_train", s.n_train);
  s.n_test = j.value("n_test", s.n_test);
  if (j.contains("train_grid")) {
    const auto g = j.at("train_grid").get<std::string>();
    if (g == "uniform") {
      s.train_grid = GridKind::uniform;
    } else if (g == "irregular") {
      s.train_grid = GridKind::irregular;
    } else {
      throw Error("train_grid must be 'uniform' or 'irregular'");
    }
  }
  s.sigma = j.value("sigma", s.sigma);
  s.trajectories = j.value("trajectories", s.trajectories);
  s.ic_low = j.value("ic_low", s.ic_low);
  s.ic_high = j.value("ic_high", s.ic_high);
  s.initial_state = j.value("initial_state", s.initial_state);
  if (j.contains("params")) {
    const auto& p = j.at("params");
    s.a = p.value("a", s.a);
    s.b = p.value("b", s.b);
    s.c = p.value("c", s.c);
    s.d = p.value("d", s.d);
    s.gamma = p.value("gamma", s.gamma);
    s.omega = p.value("omega", s.omega);
    s.gravity = p.value("gravity", s.gravity);
    s.masses = p.value("masses", s.masses);
  }
  s.validate();
  return s;
}

void field(const SystemSpec& spec, double t, std::span<const double> x, std::span<double> dx) {
  if (x.size() != spec.dim() || dx.size() != spec.dim()) {
    throw ShapeError(to_string(spec.kind) + " field expects a state of dimension " + std::to_string(spec.dim()));
  }
  switch (spec.kind) {
    case SystemKind::spiral:
      dx[0] = spec.a * x[0] + spec.b * x[1];
      dx[1] = spec.c * x[0] + spec.d * x[1];
      return;
    case SystemKind::oscillator:
      dx[0] = x[1];
      dx[1] = -(spec.omega * spec.omega + spec.gamma * spec.gamma) * x[0] - 2.0 * spec.gamma * x[1];
      return;
    case SystemKind::stiff1:
      dx[0] = -1000.0 * x[0] + 3000.0 - 2000.0 * std::exp(-t);
      return;
    case SystemKind::stiff2:
      dx[0] = -1000.0 * x[0] + 3000.0 - 2000.0 * std::exp(-t) + 1000.0 * std::sin(t);
      return;
    case SystemKind::three_body: {
      for (std::size_t k = 0; k < 9; ++k) {
        dx[k] = x[9 + k];
        dx[9 + k] = 0.0;
      }
      for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
          if (i == j) continue;
          double r[3], r2 = 0.0;
          for (std::size_t k = 0; k < 3; ++k) {
            r[k] = x[3 * i + k] - x[3 * j + k];
            r2 += r[k] * r[k];
          }
          if (r2 == 0.0) {
            throw NumericError("three-body singularity: bodies " + std::to_string(i + 1) + " and " +
                               std::to_string(j + 1) + " coincide at t=" + std::to_string(t));
          }
          const double inv3 = 1.0 / (r2 * std::sqrt(r2));
          for (std::size_t k = 0; k < 3; ++k) dx[9 + 3 * i + k] -= spec.gravity * spec.masses[j] * r[k] * inv3;
        }
      }
      return;
    }
  }
}

ode::Field make_field(const SystemSpec& spec) {
  return [spec](double t, std::span<const double> x, std::span<double> dx) { field(spec, t, x, dx); };
}

bool has_closed_form(SystemKind kind) {
  return kind == SystemKind::spiral || kind == SystemKind::oscillator || kind == SystemKind::stiff1;
}

std::vector<double> closed_form(const SystemSpec& spec, std::span<const double> x0, double t) {
  if (x0.size() != spec.dim()) throw ShapeError("closed_form: initial state has the wrong dimension");
  const double s = t - spec.t0;
  switch (spec.kind) {
    case SystemKind::spiral: {
      // exp(A s) for a general 2x2 matrix through its trace and discriminant.
      const double tau = 0.5 * (spec.a + spec.d);
      const double disc = 0.25 * (spec.a - spec.d) * (spec.a - spec.d) + spec.b * spec.c;
      double p, q;  // exp(A s) = e^{tau s} (p I + q (A - tau I))
      if (disc < 0.0) {
        const double w = std::sqrt(-disc);
        p = std::cos(w * s);
        q = std::sin(w * s) / w;
      } else if (disc > 0.0) {
        const double w = std::sqrt(disc);
        p = std::cosh(w * s);
        q = std::sinh(w * s) / w;
      } else {
        p = 1.0;
        q = s;
      }
      const double e = std::exp(tau * s);
      const double m00 = e * (p + q * (spec.a - tau)), m01 = e * q * spec.b;
      const double m10 = e * q * spec.c, m11 = e * (p + q * (spec.d - tau));
      return {m00 * x0[0] + m01 * x0[1], m10 * x0[0] + m11 * x0[1]};
    }
    case SystemKind::oscillator: {
      const double g = spec.gamma, w = spec.omega;
      const double e = std::exp(-g * s), cs = std::cos(w * s), sn = std::sin(w * s);
      const double k = (x0[1] + g * x0[0]) / w;
      const double x = e * (x0[0] * cs + k * sn);
      const double v = e * (-g * (x0[0] * cs + k * sn) + (-x0[0] * w * sn + k * w * cs));
      return {x, v};
    }
    case SystemKind::stiff1: {
      if (spec.t0 != 0.0) throw Error("stiff1 closed form assumes t0 = 0");
      const double y0 = x0[0];
      // y = 3 - (2000/999) e^{-t} + K e^{-1000 t},  K = y0 - 3 + 2000/999
      const double K = y0 - 3.0 + 2000.0 / 999.0;
      return {3.0 - 2000.0 / 999.0 * std::exp(-t) + K * std::exp(-1000.0 * t)};
    }
    default:
      throw Error("no closed form for " + to_string(spec.kind));
  }
}

std::vector<std::size_t> observed_dims(SystemKind kind) {
  switch (kind) {
    case SystemKind::oscillator: return {0};
    case SystemKind::three_body: return {0, 1, 2, 3, 4, 5, 6, 7, 8};
    default: {
      std::vector<std::size_t> all(state_dim(kind));
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      return all;
    }
  }
}

namespace {

std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = a + (b - a) * double(i) / double(n - 1);
  t.back() = b;
  return t;
}

}  // namespace

std::vector<double> train_grid(const SystemSpec& spec, Rng& rng) {
  if (spec.train_grid == GridKind::uniform) return linspace(spec.t0, spec.t_train, spec.n_train);
  return funclib::sample_times(spec.n_train, spec.t0, spec.t_train, rng);
}

std::vector<double> interp_grid(const SystemSpec& spec) { return linspace(spec.t0, spec.t_train, spec.n_test); }

std::vector<double> extrap_grid(const SystemSpec& spec) { return linspace(spec.t_train, spec.t_test, spec.n_test); }

std::vector<std::vector<double>> initial_states(const SystemSpec& spec, Rng& rng) {
  if (spec.trajectories == 1) {
    return {spec.initial_state.empty() ? spec.default_initial_state() : spec.initial_state};
  }
  std::uniform_real_distribution<double> u(spec.ic_low, spec.ic_high);
  std::vector<std::vector<double>> out(spec.trajectories, std::vector<double>(spec.dim()));
  for (auto& x : out) {
    for (double& v : x) v = u(rng);
  }
  return out;
}

ode::Trajectory make_truth(const SystemSpec& spec, std::span<const double> x0, std::span<const double> times) {
  if (x0.size() != spec.dim()) throw ShapeError("make_truth: initial state has the wrong dimension");
  if (has_closed_form(spec.kind)) {
    ode::Trajectory traj(spec.dim());
    for (double t : times) traj.push_back(t, closed_form(spec, x0, t));
    traj.validate();
    return traj;
  }
  return ode::reference_solve(make_field(spec), x0, spec.t0, times);
}

ode::Trajectory add_noise(const ode::Trajectory& traj, double sigma, Rng& rng, std::span<const std::size_t> dims) {
  if (sigma < 0.0) throw Error("noise sigma must be non-negative");
  ode::Trajectory out = traj;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> n(0.0, sigma);
  auto& v = out.mutable_values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (dims.empty()) {
      for (std::size_t d = 0; d < out.dim(); ++d) v[i * out.dim() + d] += n(rng);
    } else {
      for (std::size_t d : dims) v[i * out.dim() + d] += n(rng);
    }
  }
  return out;
}

double three_body_energy(const SystemSpec& spec, std::span<const double> x) {
  if (spec.kind != SystemKind::three_body || x.size() != 18) throw Error("three_body_energy needs a three-body state");
  double kinetic = 0.0, potential = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double v2 = 0.0;
    for (std::size_t k = 0; k < 3; ++k) v2 += x[9 + 3 * i + k] * x[9 + 3 * i + k];
    kinetic += 0.5 * spec.masses[i] * v2;
    for (std::size_t j = i + 1; j < 3; ++j) {
      double r2 = 0.0;
      for (std::size_t k = 0; k < 3; ++k) r2 += std::pow(x[3 * i + k] - x[3 * j + k], 2);
      potential -= spec.gravity * spec.masses[i] * spec.masses[j] / std::sqrt(r2);
    }
  }
  return kinetic + potential;
}

}  // namespace ndoflow::dynamics
