#include "ndoflow/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <thread>

#include <time.h>

#include <fmt/format.h>

#include "ndoflow/config.hpp"
#include "ndoflow/trajectory_io.hpp"

namespace ndoflow::harness {

namespace fs = std::filesystem;
using ad::Tensor;

namespace {

ode::SolverConfig solver_from_json(const nlohmann::json& j, ode::SolverConfig s) {
  s.method = ode::parse_method(j.value("method", ode::to_string(s.method)));
  s.rtol = j.value("rtol", s.rtol);
  s.atol = j.value("atol", s.atol);
  s.initial_step = j.value("initial_step", s.initial_step);
  s.step_size = j.value("step_size", s.step_size);
  s.max_steps = j.value("max_steps", s.max_steps);
  s.validate();
  return s;
}

double thread_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return double(ts.tv_sec) + 1e-9 * double(ts.tv_nsec);
}

void log_line(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

std::string fmt_g(double v) { return fmt::format("{:g}", v); }

/// Observed dims are either all dims, or the first half with the second half
/// holding their (hidden) time derivatives.
bool hidden_velocity_layout(const dynamics::SystemSpec& system) {
  const auto obs = dynamics::observed_dims(system.kind);
  if (obs.size() == system.dim()) return false;
  if (2 * obs.size() != system.dim()) throw Error("unsupported observation layout for " + to_string(system.kind));
  for (std::size_t k = 0; k < obs.size(); ++k) {
    if (obs[k] != k) throw Error("unsupported observation layout for " + to_string(system.kind));
  }
  return true;
}

Tensor observed_matrix(const ode::Trajectory& traj, std::span<const std::size_t> dims) {
  Tensor x = Tensor::zeros(traj.size(), dims.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    for (std::size_t k = 0; k < dims.size(); ++k) x.at(i, k) = traj.at(i, dims[k]);
  }
  return x;
}

ode::Trajectory batch_component(const std::vector<Tensor>& states, std::span<const double> times, std::size_t r) {
  const std::size_t D = states.front().cols();
  ode::Trajectory traj(D);
  std::vector<double> row(D);
  for (std::size_t i = 0; i < states.size(); ++i) {
    for (std::size_t d = 0; d < D; ++d) row[d] = states[i].at(r, d);
    traj.push_back(times[i], row);
  }
  return traj;
}

std::string cell_stem(const std::string& method, double sigma, std::uint64_t seed) {
  return fmt::format("{}_sigma{}_seed{}", method, fmt_g(sigma), seed);
}

void write_cell_artifacts(const fs::path& dir, const CellResult& r) {
  const std::string stem = cell_stem(r.row.method, r.row.sigma, r.row.seed);
  std::string curve = "iteration,loss,trajectory_mse,skipped\n";
  for (const auto& p : r.train.curve) {
    curve += fmt::format("{},{},{},{}\n", p.iteration, io::format_double(p.loss), io::format_double(p.trajectory_mse),
                         p.skipped ? 1 : 0);
  }
  io::write_file_atomic(dir / ("curve_" + stem + ".csv"), curve);

  const std::size_t D = r.pred_in.dim();
  std::string pred = "t";
  for (std::size_t d = 0; d < D; ++d) pred += fmt::format(",pred_x{}", d + 1);
  for (std::size_t d = 0; d < D; ++d) pred += fmt::format(",true_x{}", d + 1);
  pred += '\n';
  auto rows = [&](const ode::Trajectory& p, const ode::Trajectory& t, std::size_t from) {
    for (std::size_t i = from; i < p.size(); ++i) {
      pred += io::format_double(p.time(i));
      for (double v : p.state(i)) pred += "," + io::format_double(v);
      for (double v : t.state(i)) pred += "," + io::format_double(v);
      pred += '\n';
    }
  };
  rows(r.pred_in, r.truth_in, 0);
  const bool shared = !r.pred_in.empty() && !r.pred_ex.empty() && r.pred_ex.time(0) == r.pred_in.times().back();
  rows(r.pred_ex, r.truth_ex, shared ? 1 : 0);
  io::write_file_atomic(dir / ("pred_" + stem + ".csv"), pred);
}

/// Runs task(i) for i in [0, n) on `workers` threads; exceptions are caught
/// per task and returned as messages.
std::vector<std::string> parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& task) {
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        task(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        if (errors[i].empty()) errors[i] = "unknown error";
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return errors;
}

}  // namespace

nlohmann::json NdoSpec::training_json() const {
  return {{"order", order}, {"library", library.to_json()}, {"arch", arch.to_json()}, {"train", train.to_json()}};
}

NdoSpec NdoSpec::from_json(const nlohmann::json& j, int order) {
  NdoSpec s;
  s.order = order;
  s.library = funclib::LibraryConfig::from_json(j.value("library", nlohmann::json::object()));
  nlohmann::json arch = j.value("arch", nlohmann::json::object());
  arch["order"] = order;
  s.arch = ndo::Architecture::from_json(arch);
  s.train = ndo::TrainConfig::from_json(j.value("train", nlohmann::json::object()));
  if (j.contains("checkpoint") && !j.at("checkpoint").is_null()) {
    s.checkpoint = fs::path(j.at("checkpoint").get<std::string>());
  }
  return s;
}

fs::path ndo_cache_path(const NdoSpec& spec, const fs::path& cache_dir) {
  return cache_dir / fmt::format("ndo-order{}-{}.bin", spec.order, config::fingerprint(spec.training_json()));
}

ndo::NdoModel obtain_ndo(const NdoSpec& spec, const fs::path& cache_dir, const LogFn& log) {
  auto check = [&](ndo::NdoModel m, const fs::path& from) {
    if (m.order() != spec.order) {
      throw Error(fmt::format("{} holds an order-{} NDO, expected order {}", from.string(), m.order(), spec.order));
    }
    return m;
  };
  if (spec.checkpoint) return check(ndo::NdoModel::load(*spec.checkpoint), *spec.checkpoint);
  const fs::path path = ndo_cache_path(spec, cache_dir);
  if (fs::exists(path)) {
    log_line(log, "using cached NDO " + path.string());
    return check(ndo::NdoModel::load(path), path);
  }
  log_line(log, fmt::format("pretraining order-{} NDO (trig bound {}, {} functions, {} iterations) -> {}", spec.order,
                            spec.library.max_frequency, spec.library.n_functions, spec.train.iterations,
                            path.string()));
  const auto data = funclib::make_dataset(spec.library, spec.order, spec.arch.channels);
  std::string curve = "iteration,epoch,train_loss,val_mse\n";
  const double cpu_start = thread_cpu_seconds();
  auto result = ndo::train_ndo(data, spec.arch, spec.train, [&](const ndo::CurvePoint& p) {
    curve += fmt::format("{},{},{},{}\n", p.iteration, io::format_double(p.epoch), io::format_double(p.train_loss),
                         io::format_double(p.val_mse));
    log_line(log, fmt::format("  ndo order {} iteration {} loss {:.5g} val {:.5g}", spec.order, p.iteration,
                              p.train_loss, p.val_mse));
  });
  result.model.metadata()["library"] = spec.library.to_json();
  result.model.metadata()["train"] = spec.train.to_json();
  result.model.metadata()["train_wall_seconds"] = result.seconds;
  result.model.metadata()["train_cpu_seconds"] = thread_cpu_seconds() - cpu_start;
  fs::create_directories(cache_dir);
  result.model.save(path);
  auto curve_path = path;
  curve_path.replace_extension(".curve.csv");
  io::write_file_atomic(curve_path, curve);
  log_line(log, fmt::format("  done in {:.1f} s ({:.1f} s CPU)", result.seconds,
                            result.model.metadata()["train_cpu_seconds"].get<double>()));
  return result.model;
}

double MethodSpec::lambda_at(std::size_t sigma_index) const {
  if (lambda.size() == 1) return lambda.front();
  if (sigma_index >= lambda.size()) throw Error("method " + name + " has no lambda for noise level " +
                                                std::to_string(sigma_index));
  return lambda[sigma_index];
}

MethodSpec MethodSpec::from_json(const std::string& name, const nlohmann::json& j) {
  MethodSpec m;
  m.name = name;
  std::string reg = "none";
  if (name == "rnode") reg = "rnode";
  if (name == "steer") reg = "steer";
  if (name == "ndo-node") reg = "ndo";
  m.regularizer = node::parse_regularizer(j.value("regularizer", reg));
  if (j.contains("lambda")) {
    const auto& l = j.at("lambda");
    m.lambda = l.is_array() ? l.get<std::vector<double>>() : std::vector<double>{l.get<double>()};
  }
  if (m.lambda.empty()) throw Error("method " + name + " has an empty lambda list");
  m.steer_b = j.value("steer_b", m.steer_b);
  m.train = j.value("train", nlohmann::json::object());
  return m;
}

bool ExperimentSpec::needs_ndo() const {
  return std::any_of(methods.begin(), methods.end(),
                     [](const MethodSpec& m) { return m.regularizer == node::Regularizer::ndo; });
}

node::TrainSpec ExperimentSpec::train_spec(const MethodSpec& method, std::size_t sigma_index,
                                           std::uint64_t seed) const {
  nlohmann::json t = train;
  config::merge(t, method.train);
  t["regularizer"] = node::to_string(method.regularizer);
  t["lambda"] = method.lambda_at(sigma_index);
  t["steer_b"] = method.steer_b;
  t["seed"] = seed;
  return node::TrainSpec::from_json(t);
}

ExperimentSpec ExperimentSpec::from_json(const nlohmann::json& j) {
  ExperimentSpec s;
  s.raw = j;
  s.name = j.value("name", s.name);
  if (!j.contains("system")) throw Error("experiment needs a 'system' section");
  s.system = dynamics::SystemSpec::from_json(j.at("system"));
  s.sigmas = j.contains("sigmas") ? j.at("sigmas").get<std::vector<double>>() : std::vector<double>{s.system.sigma};
  if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  nlohmann::json field = j.value("field", nlohmann::json::object());
  if (!field.contains("state_dim")) field["state_dim"] = s.system.dim();
  s.field = node::FieldConfig::from_json(field);
  if (s.field.state_dim != s.system.dim()) throw Error("field state_dim does not match the system");
  s.train = j.value("train", nlohmann::json::object());
  if (j.contains("methods")) {
    const auto& m = j.at("methods");
    if (m.is_array()) {
      for (const auto& e : m) s.methods.push_back(MethodSpec::from_json(e.at("name").get<std::string>(), e));
    } else {
      for (const auto& [name, e] : m.items()) s.methods.push_back(MethodSpec::from_json(name, e));
    }
  }
  if (j.contains("ndo")) {
    const auto& n = j.at("ndo");
    if (n.contains("order1")) s.ndo1 = NdoSpec::from_json(n.at("order1"), 1);
    if (n.contains("order2")) s.ndo2 = NdoSpec::from_json(n.at("order2"), 2);
  }
  s.segment_len = j.value("segment_len", s.segment_len);
  s.eval_solver.rtol = 1e-7;
  s.eval_solver.atol = 1e-9;
  s.eval_solver = solver_from_json(j.value("eval_solver", nlohmann::json::object()), s.eval_solver);

  if (s.seeds.empty()) throw Error("experiment needs at least one seed");
  if (s.sigmas.empty()) throw Error("experiment needs at least one noise level");
  for (double sg : s.sigmas) {
    if (!(sg >= 0.0)) throw Error("noise levels must be non-negative");
  }
  for (const auto& m : s.methods) {
    if (m.lambda.size() != 1 && m.lambda.size() != s.sigmas.size()) {
      throw Error("method " + m.name + " needs one lambda or one per noise level");
    }
    s.train_spec(m, 0, 0);
  }
  if (s.needs_ndo()) {
    if (!s.ndo1) throw Error("the ndo regularizer needs an 'ndo.order1' section");
    if (hidden_velocity_layout(s.system) && !s.ndo2) throw Error("hidden velocities need an 'ndo.order2' section");
  }
  return s;
}

std::vector<double> finite_difference(std::span<const double> t, std::span<const double> y) {
  const std::size_t n = t.size();
  if (n != y.size() || n < 2) throw ShapeError("finite_difference needs at least two matching samples");
  std::vector<double> d(n);
  d[0] = (y[1] - y[0]) / (t[1] - t[0]);
  d[n - 1] = (y[n - 1] - y[n - 2]) / (t[n - 1] - t[n - 2]);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h1 = t[i] - t[i - 1], h2 = t[i + 1] - t[i];
    d[i] = -h2 / (h1 * (h1 + h2)) * y[i - 1] + (h2 - h1) / (h1 * h2) * y[i] + h1 / (h2 * (h1 + h2)) * y[i + 1];
  }
  return d;
}

CellData make_cell_data(const ExperimentSpec& spec, double sigma, std::uint64_t seed, const NdoModels& ndos) {
  const auto& sys = spec.system;
  CellData cell;
  Rng grid_rng(derive_seed(seed, 1)), ic_rng(derive_seed(seed, 2)), noise_rng(derive_seed(seed, 3));
  cell.times = dynamics::train_grid(sys, grid_rng);
  cell.true_initial_states = dynamics::initial_states(sys, ic_rng);
  const auto obs = dynamics::observed_dims(sys.kind);
  for (const auto& x0 : cell.true_initial_states) {
    cell.noisy.push_back(dynamics::add_noise(dynamics::make_truth(sys, x0, cell.times), sigma, noise_rng, obs));
  }

  const std::size_t n = cell.times.size(), R = cell.noisy.size(), D = sys.dim(), K = obs.size();
  const bool hidden = hidden_velocity_layout(sys);
  cell.difference_states.assign(n, Tensor::zeros(R, D));
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t k = 0; k < K; ++k) {
      const auto comp = cell.noisy[r].component(obs[k]);
      const auto fd = hidden ? finite_difference(cell.times, comp) : std::vector<double>{};
      for (std::size_t i = 0; i < n; ++i) {
        cell.difference_states[i].at(r, obs[k]) = comp[i];
        if (hidden) cell.difference_states[i].at(r, K + k) = fd[i];
      }
    }
  }

  if (ndos.first == nullptr) return cell;
  if (hidden && ndos.second == nullptr) throw Error("hidden velocities need a second-order NDO");
  cell.ndo_targets.assign(n, Tensor::zeros(R, D));
  cell.ndo_states.assign(n, Tensor::zeros(R, D));
  auto run = [&](const ndo::NdoModel& m, const Tensor& x, const Tensor* first) {
    return spec.segment_len > 0 ? ndo::segment_estimate(m, cell.times, x, spec.segment_len, first)
                                : ndo::estimate(m, cell.times, x, first);
  };
  for (std::size_t r = 0; r < R; ++r) {
    const Tensor x = observed_matrix(cell.noisy[r], obs);
    const Tensor d1 = run(*ndos.first, x, nullptr);
    const Tensor d2 = hidden ? run(*ndos.second, x, &d1) : Tensor();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < K; ++k) {
        cell.ndo_states[i].at(r, k) = x.at(i, k);
        if (hidden) {
          cell.ndo_states[i].at(r, K + k) = d1.at(i, k);
          cell.ndo_targets[i].at(r, k) = d1.at(i, k);
          cell.ndo_targets[i].at(r, K + k) = d2.at(i, k);
        } else {
          cell.ndo_targets[i].at(r, obs[k]) = d1.at(i, k);
        }
      }
    }
  }
  return cell;
}

node::TrainData make_train_data(const ExperimentSpec& spec, const CellData& cell, const MethodSpec& method) {
  node::TrainData data;
  data.times = cell.times;
  data.observed_dims = dynamics::observed_dims(spec.system.kind);
  const std::size_t R = cell.noisy.size();
  for (std::size_t i = 0; i < cell.times.size(); ++i) {
    Tensor o = Tensor::zeros(R, data.observed_dims.size());
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t k = 0; k < data.observed_dims.size(); ++k) o.at(r, k) = cell.noisy[r].at(i, data.observed_dims[k]);
    }
    data.observations.push_back(std::move(o));
  }
  const bool use_ndo = method.regularizer == node::Regularizer::ndo;
  if (use_ndo && cell.ndo_targets.empty()) throw Error("method " + method.name + " needs NDO estimates");
  const auto& states = use_ndo ? cell.ndo_states : cell.difference_states;
  data.initial_state = states.front();
  if (use_ndo) data.derivative_targets = cell.ndo_targets;
  if (method.regularizer == node::Regularizer::ndo || method.regularizer == node::Regularizer::rnode) {
    data.penalty_states = states;
  }
  return data;
}

CellResult run_cell(const ExperimentSpec& spec, const MethodSpec& method, std::size_t sigma_index,
                    std::uint64_t seed, const CellData& cell) {
  const auto start = std::chrono::steady_clock::now();
  const node::TrainSpec ts = spec.train_spec(method, sigma_index, seed);
  const node::TrainData data = make_train_data(spec, cell, method);
  node::NodeModel model(spec.field, derive_seed(seed, 4));
  CellResult res;
  res.train = node::train(model, data, ts);

  const auto obs = dynamics::observed_dims(spec.system.kind);
  const auto gin = dynamics::interp_grid(spec.system);
  const auto gex = dynamics::extrap_grid(spec.system);
  const double t0 = spec.system.t0;
  const auto pin = node::predict(model, res.train.initial_state, t0, gin, spec.eval_solver);
  const auto pex = node::predict(model, res.train.initial_state, t0, gex, spec.eval_solver);
  double in_sum = 0.0, ex_sum = 0.0;
  const std::size_t R = cell.true_initial_states.size();
  for (std::size_t r = 0; r < R; ++r) {
    const auto& x0 = cell.true_initial_states[r];
    const auto tin = dynamics::make_truth(spec.system, x0, gin);
    const auto tex = dynamics::make_truth(spec.system, x0, gex);
    const auto p_in = batch_component(pin, gin, r);
    const auto p_ex = batch_component(pex, gex, r);
    in_sum += node::mse(p_in, tin, obs);
    ex_sum += node::mse(p_ex, tex, obs);
    if (r == 0) {
      res.pred_in = p_in;
      res.pred_ex = p_ex;
      res.truth_in = tin;
      res.truth_ex = tex;
    }
  }
  res.row.method = method.name;
  res.row.sigma = spec.sigmas[sigma_index];
  res.row.seed = seed;
  res.row.in_mse = in_sum / double(R);
  res.row.ex_mse = ex_sum / double(R);
  res.row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows) {
  std::vector<SummaryRow> out;
  std::vector<std::vector<const MetricsRow*>> groups;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const SummaryRow& s) { return s.method == r.method && s.sigma == r.sigma; });
    if (it == out.end()) {
      out.push_back({r.method, r.sigma});
      groups.emplace_back();
      it = out.end() - 1;
    }
    groups[std::size_t(it - out.begin())].push_back(&r);
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    const auto& members = groups[g];
    const double n = double(members.size());
    double si = 0, se = 0;
    for (const auto* m : members) {
      si += m->in_mse;
      se += m->ex_mse;
    }
    out[g].runs = members.size();
    out[g].in_mean = si / n;
    out[g].ex_mean = se / n;
    double vi = 0, ve = 0;
    for (const auto* m : members) {
      vi += (m->in_mse - out[g].in_mean) * (m->in_mse - out[g].in_mean);
      ve += (m->ex_mse - out[g].ex_mean) * (m->ex_mse - out[g].ex_mean);
    }
    out[g].in_std = std::sqrt(vi / n);
    out[g].ex_std = std::sqrt(ve / n);
  }
  return out;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string s = "method,sigma,seed,in_mse,ex_mse,wall_time_s\n";
  for (const auto& r : rows) {
    s += fmt::format("{},{},{},{},{},{}\n", r.method, io::format_double(r.sigma), r.seed, io::format_double(r.in_mse),
                     io::format_double(r.ex_mse), io::format_double(r.wall_time_s));
  }
  return s;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string s = "method,sigma,runs,in_mse_mean,in_mse_std,ex_mse_mean,ex_mse_std\n";
  for (const auto& r : rows) {
    s += fmt::format("{},{},{},{},{},{},{}\n", r.method, io::format_double(r.sigma), r.runs,
                     io::format_double(r.in_mean), io::format_double(r.in_std), io::format_double(r.ex_mean),
                     io::format_double(r.ex_std));
  }
  return s;
}

std::string summary_table(const std::vector<SummaryRow>& rows) {
  std::string s = fmt::format("{:<16} {:>8} {:>4}  {:>25}  {:>25}\n", "method", "sigma", "runs", "in_mse (mean +- std)",
                              "ex_mse (mean +- std)");
  for (const auto& r : rows) {
    s += fmt::format("{:<16} {:>8g} {:>4}  {:>12.4e} +- {:<10.3e}  {:>12.4e} +- {:<10.3e}\n", r.method, r.sigma, r.runs,
                     r.in_mean, r.in_std, r.ex_mean, r.ex_std);
  }
  return s;
}

std::vector<MetricsRow> run_experiment(const ExperimentSpec& spec, const RunOptions& options) {
  if (spec.methods.empty()) throw Error("experiment has no methods");
  fs::create_directories(options.out_dir);
  io::write_file_atomic(options.out_dir / "config.json", spec.raw.dump(2) + "\n");

  std::optional<ndo::NdoModel> first, second;
  if (spec.needs_ndo()) {
    first = obtain_ndo(*spec.ndo1, options.cache_dir, options.log);
    if (hidden_velocity_layout(spec.system)) second = obtain_ndo(*spec.ndo2, options.cache_dir, options.log);
  }
  const NdoModels ndos{first ? &*first : nullptr, second ? &*second : nullptr};

  struct Pair {
    std::size_t sigma_index;
    std::uint64_t seed;
  };
  std::vector<Pair> pairs;
  for (std::size_t si = 0; si < spec.sigmas.size(); ++si) {
    for (auto seed : spec.seeds) pairs.push_back({si, seed});
  }
  std::vector<std::optional<CellData>> cells(pairs.size());
  const auto data_errors = parallel_for(pairs.size(), options.workers, [&](std::size_t p) {
    cells[p] = make_cell_data(spec, spec.sigmas[pairs[p].sigma_index], pairs[p].seed, ndos);
  });

  const std::size_t M = spec.methods.size();
  std::vector<std::optional<MetricsRow>> rows(pairs.size() * M);
  std::mutex log_mutex;
  auto errors = parallel_for(rows.size(), options.workers, [&](std::size_t task) {
    const auto& pair = pairs[task / M];
    const auto& method = spec.methods[task % M];
    if (!cells[task / M]) throw Error("data generation failed: " + data_errors[task / M]);
    CellResult res = run_cell(spec, method, pair.sigma_index, pair.seed, *cells[task / M]);
    if (!options.timing) res.row.wall_time_s = 0.0;
    if (options.artifacts) write_cell_artifacts(options.out_dir, res);
    {
      std::lock_guard lock(log_mutex);
      log_line(options.log, fmt::format("{} sigma={} seed={}: in_mse {:.4e} ex_mse {:.4e} ({} skipped)", method.name,
                                        fmt_g(res.row.sigma), pair.seed, res.row.in_mse, res.row.ex_mse,
                                        res.train.skipped));
    }
    rows[task] = res.row;
  });

  std::vector<MetricsRow> done;
  std::string failures = "method,sigma,seed,error\n";
  bool failed = false;
  for (std::size_t task = 0; task < rows.size(); ++task) {
    if (rows[task]) {
      done.push_back(*rows[task]);
      continue;
    }
    failed = true;
    const auto& pair = pairs[task / M];
    std::string msg = errors[task];
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::replace(msg.begin(), msg.end(), ',', ';');
    failures += fmt::format("{},{},{},{}\n", spec.methods[task % M].name, io::format_double(spec.sigmas[pair.sigma_index]),
                            pair.seed, msg);
    log_line(options.log, fmt::format("warning: {} sigma={} seed={} failed: {}", spec.methods[task % M].name,
                                      fmt_g(spec.sigmas[pair.sigma_index]), pair.seed, errors[task]));
  }
  if (failed) {
    io::write_file_atomic(options.out_dir / "failures.csv", failures);
  } else if (fs::exists(options.out_dir / "failures.csv")) {
    fs::remove(options.out_dir / "failures.csv");
  }
  if (done.empty()) throw Error("every experiment cell failed");
  const auto summary = summarize(done);
  io::write_file_atomic(options.out_dir / "metrics.csv", metrics_csv(done));
  io::write_file_atomic(options.out_dir / "summary.csv", summary_csv(summary));
  io::write_file_atomic(options.out_dir / "summary.txt", summary_table(summary));
  return done;
}

std::vector<LambdaSweepRow> run_lambda_sweep(const ExperimentSpec& spec, const std::vector<double>& lambdas,
                                             const RunOptions& options) {
  if (lambdas.empty()) throw Error("lambda sweep needs a non-empty grid");
  ExperimentSpec sweep = spec;
  MethodSpec base;
  base.name = "ndo-node";
  base.regularizer = node::Regularizer::ndo;
  for (const auto& m : spec.methods) {
    if (m.regularizer == node::Regularizer::ndo) base = m;
  }
  MethodSpec vanilla;
  vanilla.name = "node";
  for (const auto& m : spec.methods) {
    if (m.regularizer == node::Regularizer::none) vanilla = m;
  }
  sweep.methods = {vanilla};
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw Error("lambda values must be non-negative");
    MethodSpec m = base;
    m.name = "ndo-node@" + fmt_g(l);
    m.lambda = {l};
    sweep.methods.push_back(m);
  }
  const auto rows = run_experiment(sweep, options);
  const auto summary = summarize(rows);
  std::vector<LambdaSweepRow> out;
  std::string csv = "sigma,lambda,in_mse_ratio,ex_mse_ratio\n";
  for (double sigma : sweep.sigmas) {
    auto find = [&](const std::string& name) -> const SummaryRow* {
      for (const auto& s : summary) {
        if (s.method == name && s.sigma == sigma) return &s;
      }
      return nullptr;
    };
    const SummaryRow* v = find(vanilla.name);
    if (v == nullptr) continue;
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
      const SummaryRow* n = find(sweep.methods[k + 1].name);
      if (n == nullptr) continue;
      LambdaSweepRow row{sigma, lambdas[k], n->in_mean / v->in_mean, n->ex_mean / v->ex_mean};
      csv += fmt::format("{},{},{},{}\n", io::format_double(row.sigma), io::format_double(row.lambda),
                         io::format_double(row.in_ratio), io::format_double(row.ex_ratio));
      out.push_back(row);
    }
  }
  io::write_file_atomic(options.out_dir / "lambda_sweep.csv", csv);
  return out;
}

LibraryAblation LibraryAblation::from_json(const nlohmann::json& j) {
  LibraryAblation a;
  if (!j.contains("ndo") || !j.at("ndo").contains("order1")) throw Error("library ablation needs 'ndo.order1'");
  a.base = NdoSpec::from_json(j.at("ndo").at("order1"), 1);
  a.base.checkpoint.reset();
  const nlohmann::json lc = j.value("library_complexity", nlohmann::json::object());
  if (lc.contains("trig_bounds")) a.trig_bounds = lc.at("trig_bounds").get<std::vector<int>>();
  if (a.trig_bounds.empty()) throw Error("library ablation needs a non-empty list of trig bounds");
  for (int b : a.trig_bounds) {
    if (b < 0) throw Error("trig bounds must be non-negative");
  }
  const nlohmann::json probe = lc.value("probe", nlohmann::json::object());
  if (probe.contains("function")) {
    a.probe = funclib::SymbolicFunction::from_json(probe.at("function"));
  } else {
    a.probe = funclib::SymbolicFunction({{3, 1.0 / 3.0, 0.0}, {15, 1.0 / 15.0, 0.0}, {30, 1.0 / 30.0, 0.0}}, {});
  }
  const std::size_t n = probe.value("n_points", std::size_t{100});
  const double t0 = probe.value("t0", 0.0), t1 = probe.value("t1", 1.0);
  if (n < 2 || !(t1 > t0)) throw Error("probe grid needs at least two points on a non-empty interval");
  for (std::size_t i = 0; i < n; ++i) a.probe_times.push_back(t0 + (t1 - t0) * double(i) / double(n - 1));
  return a;
}

std::vector<LibraryRow> run_library_ablation(const LibraryAblation& spec, const RunOptions& options) {
  const std::size_t B = spec.trig_bounds.size(), n = spec.probe_times.size();
  std::vector<std::optional<ndo::NdoModel>> models(B);
  std::mutex log_mutex;
  const LogFn log = [&](const std::string& s) {
    std::lock_guard lock(log_mutex);
    log_line(options.log, s);
  };
  const auto errors = parallel_for(B, options.workers, [&](std::size_t k) {
    NdoSpec s = spec.base;
    s.library.max_frequency = spec.trig_bounds[k];
    models[k] = obtain_ndo(s, options.cache_dir, log);
  });
  for (std::size_t k = 0; k < B; ++k) {
    if (!errors[k].empty()) throw Error(fmt::format("trig bound {}: {}", spec.trig_bounds[k], errors[k]));
  }
  Tensor x = Tensor::zeros(n, 1);
  for (std::size_t i = 0; i < n; ++i) x.at(i, 0) = spec.probe(spec.probe_times[i]);
  const auto dz = spec.probe.derivative(1);
  std::vector<LibraryRow> rows;
  std::vector<Tensor> estimates;
  std::string csv = "trig_bound,estimation_mse\n";
  for (std::size_t k = 0; k < B; ++k) {
    estimates.push_back(ndo::estimate(*models[k], spec.probe_times, x));
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = estimates.back().at(i, 0) - dz(spec.probe_times[i]);
      s += e * e;
    }
    rows.push_back({spec.trig_bounds[k], s / double(n)});
    csv += fmt::format("{},{}\n", rows.back().trig_bound, io::format_double(rows.back().mse));
  }
  std::string est = "t,z,dz";
  for (int b : spec.trig_bounds) est += fmt::format(",ndo_bound{}", b);
  est += '\n';
  for (std::size_t i = 0; i < n; ++i) {
    const double t = spec.probe_times[i];
    est += io::format_double(t) + "," + io::format_double(x.at(i, 0)) + "," + io::format_double(dz(t));
    for (const auto& e : estimates) est += "," + io::format_double(e.at(i, 0));
    est += '\n';
  }
  io::write_file_atomic(options.out_dir / "library_complexity.csv", csv);
  io::write_file_atomic(options.out_dir / "library_estimates.csv", est);
  return rows;
}

std::size_t workers_from_env() {
  const char* v = std::getenv("NDOFLOW_WORKERS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw Error(std::string("NDOFLOW_WORKERS must be a positive integer, got '") + v + "'");
  return std::size_t(n);
}

}  // namespace ndoflow::harness
