#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ndoflow/funclib.hpp"
#include "ndoflow/odeint.hpp"

namespace ndoflow::dynamics {

enum class SystemKind { spiral, oscillator, three_body, stiff1, stiff2 };

std::string to_string(SystemKind kind);
SystemKind parse_system_kind(const std::string& name);

/// State dimension: 2, 2, 18, 1, 1.
std::size_t state_dim(SystemKind kind);

enum class GridKind { irregular, uniform };

/// A benchmark system together with its observation protocol.
///
/// Systems:
///   spiral      x' = a x + b y,  y' = c x + d y
///   oscillator  x' = v,  v' = -(omega^2 + gamma^2) x - 2 gamma v
///   three_body  r_i'' = -sum_{j != i} G m_j (r_i - r_j) / |r_i - r_j|^3,
///               state [r1, r2, r3, v1, v2, v3]
///   stiff1      y' = -1000 y + 3000 - 2000 e^{-t}
///   stiff2      y' = -1000 y + 3000 - 2000 e^{-t} + 1000 sin t
struct SystemSpec {
  SystemKind kind = SystemKind::spiral;
  double a = -0.1, b = 2.0, c = -2.0, d = -0.1;
  double gamma = 0.1, omega = 1.0;
  double gravity = 1.0;
  std::vector<double> masses = {1.0, 1.0, 1.0};
  /// Initial state; empty selects the system default.
  std::vector<double> initial_state;
  /// Number of trajectories; above one, initial states are drawn uniformly
  /// from [ic_low, ic_high] per component.
  std::size_t trajectories = 1;
  double ic_low = -1.0, ic_high = 1.0;
  double t0 = 0.0;
  double t_train = 5.0;
  double t_test = 10.0;
  std::size_t n_train = 100;
  std::size_t n_test = 1000;
  GridKind train_grid = GridKind::irregular;
  double sigma = 0.0;

  std::size_t dim() const { return state_dim(kind); }
  std::vector<double> default_initial_state() const;
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys fall back to the defaults of the named kind.
  static SystemSpec from_json(const nlohmann::json& j);
  static SystemSpec defaults(SystemKind kind);
};

/// Right-hand side. Throws on coincident three-body positions.
void field(const SystemSpec& spec, double t, std::span<const double> x, std::span<double> dxdt);
ode::Field make_field(const SystemSpec& spec);

bool has_closed_form(SystemKind kind);
/// Exact state at time t from x0 at spec.t0 (spiral, oscillator, stiff1).
std::vector<double> closed_form(const SystemSpec& spec, std::span<const double> x0, double t);

/// Components that are observed: position only for the oscillator and the
/// three-body system, the full state otherwise.
std::vector<std::size_t> observed_dims(SystemKind kind);

/// Training grid on [t0, t_train] (sorted uniform draws with both endpoints
/// pinned, or equally spaced) with n_train points.
std::vector<double> train_grid(const SystemSpec& spec, Rng& rng);
/// n_test equally spaced points on [t0, t_train] and on [t_train, t_test].
std::vector<double> interp_grid(const SystemSpec& spec);
std::vector<double> extrap_grid(const SystemSpec& spec);

/// Initial states, one per trajectory.
std::vector<std::vector<double>> initial_states(const SystemSpec& spec, Rng& rng);

/// Clean states at `times` (closed form when available, reference solve otherwise).
ode::Trajectory make_truth(const SystemSpec& spec, std::span<const double> x0, std::span<const double> times);

/// Adds i.i.d. N(0, sigma^2) noise to the listed components (all when empty).
ode::Trajectory add_noise(const ode::Trajectory& traj, double sigma, Rng& rng,
                          std::span<const std::size_t> dims = {});

/// Kinetic plus potential energy of a three-body state.
double three_body_energy(const SystemSpec& spec, std::span<const double> state);

}  // namespace ndoflow::dynamics
