#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ndoflow/config.hpp"
#include "ndoflow/dynamics.hpp"
#include "ndoflow/experiment.hpp"
#include "ndoflow/ndo.hpp"
#include "ndoflow/trajectory_io.hpp"

namespace fs = std::filesystem;
using namespace ndoflow;

namespace {

struct Common {
  std::string profile = "desk";
  std::string out = "out";
  std::string cache = ".ndoflow-cache";
  std::vector<std::uint64_t> seeds;
  std::vector<double> sigmas;
  std::vector<std::string> methods;
  bool timing = false;
  bool no_artifacts = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--profile", c.profile, "Config profile")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--cache", c.cache, "Directory for pretrained NDO checkpoints");
  cmd->add_option("--seeds", c.seeds, "Comma-separated seeds (overrides the config)")->delimiter(',');
  cmd->add_option("--sigmas", c.sigmas, "Comma-separated subset of the configured noise levels")->delimiter(',');
  cmd->add_option("--methods", c.methods, "Comma-separated subset of the configured methods")->delimiter(',');
  cmd->add_flag("--timing", c.timing, "Record wall-clock time per cell");
  cmd->add_flag("--no-artifacts", c.no_artifacts, "Skip per-cell prediction and loss-curve files");
  cmd->add_flag("--quiet", c.quiet, "Only print the summary");
}

nlohmann::json load_doc(const std::string& path, const std::string& profile) {
  return config::apply_profile(config::load(path), profile);
}

harness::RunOptions run_options(const Common& c) {
  harness::RunOptions o;
  o.out_dir = c.out;
  o.cache_dir = c.cache;
  o.timing = c.timing;
  o.artifacts = !c.no_artifacts;
  o.workers = harness::workers_from_env();
  if (!c.quiet) o.log = [](const std::string& s) { std::cerr << s << '\n'; };
  return o;
}

/// Restricts an experiment document to the requested seeds, noise levels and
/// methods. Per-noise-level lambda lists are subset along with the levels.
void restrict_doc(nlohmann::json& doc, const Common& c) {
  if (!c.seeds.empty()) doc["seeds"] = c.seeds;
  if (!c.sigmas.empty()) {
    const auto all = doc.value("sigmas", std::vector<double>{0.0});
    std::vector<std::size_t> keep;
    for (double s : c.sigmas) {
      const auto it = std::find(all.begin(), all.end(), s);
      if (it == all.end()) throw Error(fmt::format("noise level {} is not configured in this spec", s));
      keep.push_back(std::size_t(it - all.begin()));
    }
    doc["sigmas"] = c.sigmas;
    auto subset = [&](nlohmann::json& m) {
      if (m.contains("lambda") && m.at("lambda").is_array() && m.at("lambda").size() == all.size()) {
        nlohmann::json l = nlohmann::json::array();
        for (auto k : keep) l.push_back(m.at("lambda").at(k));
        m["lambda"] = l;
      }
    };
    if (doc.contains("methods")) {
      for (auto& [name, m] : doc["methods"].items()) subset(m);
    }
  }
  if (!c.methods.empty() && doc.contains("methods")) {
    auto& m = doc["methods"];
    auto wanted = [&](const std::string& name) {
      return std::find(c.methods.begin(), c.methods.end(), name) != c.methods.end();
    };
    nlohmann::json kept = m.is_array() ? nlohmann::json::array() : nlohmann::json::object();
    for (auto& [key, e] : m.items()) {
      const std::string name = m.is_array() ? e.at("name").get<std::string>() : key;
      if (!wanted(name)) continue;
      if (m.is_array()) {
        kept.push_back(e);
      } else {
        kept[key] = e;
      }
    }
    if (kept.size() != c.methods.size()) throw Error("--methods names a method that is not configured");
    m = kept;
  }
}

harness::ExperimentSpec experiment(const std::string& path, const Common& c) {
  auto doc = load_doc(path, c.profile);
  restrict_doc(doc, c);
  return harness::ExperimentSpec::from_json(doc);
}

harness::NdoSpec ndo_spec(const std::string& path, const std::string& profile, int order) {
  const auto doc = load_doc(path, profile);
  const std::string key = "order" + std::to_string(order);
  if (doc.contains("ndo") && doc.at("ndo").contains(key)) return harness::NdoSpec::from_json(doc.at("ndo").at(key), order);
  if (doc.contains("library") || doc.contains("train") || doc.contains("arch")) {
    return harness::NdoSpec::from_json(doc, order);
  }
  throw Error(path + " has neither 'ndo." + key + "' nor a bare NDO section");
}

int cmd_ndo_train(const std::string& cfg, int order, const std::string& out, const std::string& profile, bool quiet) {
  auto spec = ndo_spec(cfg, profile, order);
  const auto data = funclib::make_dataset(spec.library, spec.order, spec.arch.channels);
  std::string curve = "iteration,epoch,train_loss,val_mse\n";
  auto res = ndo::train_ndo(data, spec.arch, spec.train, [&](const ndo::CurvePoint& p) {
    curve += fmt::format("{},{},{},{}\n", p.iteration, io::format_double(p.epoch), io::format_double(p.train_loss),
                         io::format_double(p.val_mse));
    if (!quiet) std::cerr << fmt::format("iteration {} loss {:.5g} val {:.5g}\n", p.iteration, p.train_loss, p.val_mse);
  });
  res.model.metadata()["library"] = spec.library.to_json();
  res.model.save(out);
  fs::path curve_path = out;
  curve_path.replace_extension(".curve.csv");
  io::write_file_atomic(curve_path, curve);
  const auto& last = res.curve.back();
  std::cout << fmt::format("saved {} (val_mse {:.6g}, {:.1f} s)\n", out, last.val_mse, res.seconds);
  return 0;
}

int cmd_ndo_eval(const std::string& ckpt, std::size_t functions, std::optional<std::uint64_t> seed) {
  const auto model = ndo::NdoModel::load(ckpt);
  nlohmann::json report = {{"order", model.order()}, {"channels", model.channels()}};
  if (model.metadata().contains("library")) {
    auto lib = funclib::LibraryConfig::from_json(model.metadata().at("library"));
    lib.seed = seed.value_or(lib.seed + 1);
    lib.n_functions = functions;
    const auto data = funclib::make_dataset(lib, model.order(), model.channels());
    report["library_mse"] = ndo::dataset_mse(model, data.examples);
    report["library_seed"] = lib.seed;
    report["functions"] = functions;
  }
  if (model.order() == 1 && model.channels() == 1) {
    const auto a = harness::LibraryAblation::from_json(
        {{"ndo", {{"order1", nlohmann::json::object()}}}, {"library_complexity", nlohmann::json::object()}});
    ad::Tensor x = ad::Tensor::zeros(a.probe_times.size(), 1);
    for (std::size_t i = 0; i < a.probe_times.size(); ++i) x.at(i, 0) = a.probe(a.probe_times[i]);
    const auto d = ndo::estimate(model, a.probe_times, x);
    const auto dz = a.probe.derivative(1);
    double s = 0.0;
    for (std::size_t i = 0; i < a.probe_times.size(); ++i) s += std::pow(d.at(i, 0) - dz(a.probe_times[i]), 2);
    report["probe_mse"] = s / double(a.probe_times.size());
  }
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_run(const std::string& path, const Common& c) {
  const auto spec = experiment(path, c);
  const auto rows = harness::run_experiment(spec, run_options(c));
  std::cout << harness::summary_table(harness::summarize(rows));
  return 0;
}

int cmd_ablate(const std::string& kind, const std::string& path, const Common& c) {
  if (kind == "lambda_sweep") {
    auto doc = load_doc(path, c.profile);
    restrict_doc(doc, c);
    const auto spec = harness::ExperimentSpec::from_json(doc);
    std::vector<double> grid;
    if (doc.contains("lambda_sweep")) grid = doc.at("lambda_sweep").value("lambdas", grid);
    const auto rows = harness::run_lambda_sweep(spec, grid, run_options(c));
    std::cout << fmt::format("{:>8} {:>10} {:>14} {:>14}\n", "sigma", "lambda", "in_mse_ratio", "ex_mse_ratio");
    for (const auto& r : rows) {
      std::cout << fmt::format("{:>8g} {:>10g} {:>14.4g} {:>14.4g}\n", r.sigma, r.lambda, r.in_ratio, r.ex_ratio);
    }
    return 0;
  }
  if (kind == "library_complexity") {
    const auto spec = harness::LibraryAblation::from_json(load_doc(path, c.profile));
    const auto rows = harness::run_library_ablation(spec, run_options(c));
    std::cout << fmt::format("{:>10} {:>16}\n", "trig_bound", "estimation_mse");
    for (const auto& r : rows) std::cout << fmt::format("{:>10} {:>16.6g}\n", r.trig_bound, r.mse);
    return 0;
  }
  throw Error("unknown ablation '" + kind + "' (expected lambda_sweep or library_complexity)");
}

int cmd_estimate(const std::string& csv, const std::string& ckpt, const std::string& ckpt2, std::size_t segment,
                 const std::string& out) {
  const auto traj = io::load_csv_trajectory(csv);
  const std::size_t n = traj.size(), D = traj.dim();
  ad::Tensor x(ad::Shape{n, D}, traj.values());
  const auto first = ndo::NdoModel::load(ckpt);
  if (first.order() != 1) throw Error(ckpt + " is not a first-order NDO");
  auto run = [&](const ndo::NdoModel& m, const ad::Tensor* d1) {
    return segment > 0 ? ndo::segment_estimate(m, traj.times(), x, segment, d1) : ndo::estimate(m, traj.times(), x, d1);
  };
  const ad::Tensor d1 = run(first, nullptr);
  std::optional<ad::Tensor> d2;
  if (!ckpt2.empty()) {
    const auto second = ndo::NdoModel::load(ckpt2);
    if (second.order() != 2) throw Error(ckpt2 + " is not a second-order NDO");
    d2 = run(second, &d1);
  }
  std::string s = "t";
  for (std::size_t d = 0; d < D; ++d) s += fmt::format(",d1_x{}", d + 1);
  if (d2) {
    for (std::size_t d = 0; d < D; ++d) s += fmt::format(",d2_x{}", d + 1);
  }
  s += '\n';
  for (std::size_t i = 0; i < n; ++i) {
    s += io::format_double(traj.time(i));
    for (std::size_t d = 0; d < D; ++d) s += "," + io::format_double(d1.at(i, d));
    if (d2) {
      for (std::size_t d = 0; d < D; ++d) s += "," + io::format_double(d2->at(i, d));
    }
    s += '\n';
  }
  if (out.empty() || out == "-") {
    std::cout << s;
  } else {
    io::write_file_atomic(out, s);
  }
  return 0;
}

int cmd_simulate(const std::string& path, const std::string& profile, const std::string& grid, std::uint64_t seed,
                 std::optional<double> sigma, const std::string& out) {
  const auto doc = load_doc(path, profile);
  if (!doc.contains("system")) throw Error(path + " has no 'system' section");
  auto sys = dynamics::SystemSpec::from_json(doc.at("system"));
  if (sigma) sys.sigma = *sigma;
  Rng grid_rng(derive_seed(seed, 1)), ic_rng(derive_seed(seed, 2)), noise_rng(derive_seed(seed, 3));
  std::vector<double> times;
  if (grid == "train") {
    times = dynamics::train_grid(sys, grid_rng);
  } else {
    times = dynamics::interp_grid(sys);
    const auto ex = dynamics::extrap_grid(sys);
    times.insert(times.end(), ex.begin() + (ex.front() == times.back() ? 1 : 0), ex.end());
  }
  const auto x0 = dynamics::initial_states(sys, ic_rng).front();
  auto traj = dynamics::make_truth(sys, x0, times);
  if (sys.sigma > 0.0) traj = dynamics::add_noise(traj, sys.sigma, noise_rng, dynamics::observed_dims(sys.kind));
  io::save_csv(traj, out);
  std::cout << fmt::format("wrote {} points of {} to {}\n", traj.size(), to_string(sys.kind), out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ndoflow: neural differential operators and regularised neural ODEs"};
  app.require_subcommand(1);

  auto* ndo_cmd = app.add_subcommand("ndo", "Pretrain or evaluate a neural differential operator");
  ndo_cmd->require_subcommand(1);
  std::string ndo_cfg, ndo_out, ndo_ckpt, ndo_profile = "desk";
  int ndo_order = 1;
  bool ndo_quiet = false;
  auto* ndo_train = ndo_cmd->add_subcommand("train", "Train an NDO on its function library");
  ndo_train->add_option("config", ndo_cfg, "Config with ndo.order<N> or a bare NDO section")->required();
  ndo_train->add_option("--order", ndo_order, "Derivative order")->check(CLI::IsMember({1, 2}));
  ndo_train->add_option("--out", ndo_out, "Checkpoint path")->required();
  ndo_train->add_option("--profile", ndo_profile, "Config profile")->check(CLI::IsMember({"desk", "paper"}));
  ndo_train->add_flag("--quiet", ndo_quiet, "Suppress progress");
  std::size_t eval_functions = 200;
  std::optional<std::uint64_t> eval_seed;
  auto* ndo_eval = ndo_cmd->add_subcommand("eval", "Held-out library MSE and probe MSE of a checkpoint");
  ndo_eval->add_option("checkpoint", ndo_ckpt, "NDO checkpoint")->required()->check(CLI::ExistingFile);
  ndo_eval->add_option("--functions", eval_functions, "Number of fresh library functions");
  ndo_eval->add_option("--seed", eval_seed, "Library seed for the fresh sample");

  Common run_c;
  std::string run_spec;
  auto* run = app.add_subcommand("run", "Run an experiment spec and write metrics");
  run->add_option("spec", run_spec, "Experiment config")->required()->check(CLI::ExistingFile);
  add_common(run, run_c);

  Common abl_c;
  std::string abl_kind, abl_spec;
  auto* ablate = app.add_subcommand("ablate", "Run an ablation sweep");
  ablate->add_option("kind", abl_kind, "lambda_sweep or library_complexity")
      ->required()
      ->check(CLI::IsMember({"lambda_sweep", "library_complexity"}));
  ablate->add_option("spec", abl_spec, "Ablation config")->required()->check(CLI::ExistingFile);
  add_common(ablate, abl_c);

  std::string est_csv, est_ckpt, est_ckpt2, est_out;
  std::size_t est_segment = 0;
  auto* estimate = app.add_subcommand("estimate", "Estimate derivatives of a trajectory CSV");
  estimate->add_option("trajectory", est_csv, "CSV with header t,x1,...,xD")->required()->check(CLI::ExistingFile);
  estimate->add_option("--ndo", est_ckpt, "First-order NDO checkpoint")->required()->check(CLI::ExistingFile);
  estimate->add_option("--ndo2", est_ckpt2, "Second-order NDO checkpoint")->check(CLI::ExistingFile);
  estimate->add_option("--segment", est_segment, "Estimate on consecutive windows of this many points");
  estimate->add_option("--out", est_out, "Output CSV (stdout when omitted)");

  std::string sim_spec, sim_grid = "test", sim_out, sim_profile = "desk";
  std::uint64_t sim_seed = 0;
  std::optional<double> sim_sigma;
  auto* simulate = app.add_subcommand("simulate", "Export a ground-truth trajectory of a spec's system");
  simulate->add_option("spec", sim_spec, "Experiment config")->required()->check(CLI::ExistingFile);
  simulate->add_option("--grid", sim_grid, "train (irregular) or test (uniform, both ranges)")
      ->check(CLI::IsMember({"train", "test"}));
  simulate->add_option("--seed", sim_seed, "Seed for the grid, initial state and noise");
  simulate->add_option("--sigma", sim_sigma, "Observation noise (overrides the config)");
  simulate->add_option("--out", sim_out, "Output CSV")->required();
  simulate->add_option("--profile", sim_profile, "Config profile")->check(CLI::IsMember({"desk", "paper"}));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*ndo_train) return cmd_ndo_train(ndo_cfg, ndo_order, ndo_out, ndo_profile, ndo_quiet);
    if (*ndo_eval) return cmd_ndo_eval(ndo_ckpt, eval_functions, eval_seed);
    if (*run) return cmd_run(run_spec, run_c);
    if (*ablate) return cmd_ablate(abl_kind, abl_spec, abl_c);
    if (*estimate) return cmd_estimate(est_csv, est_ckpt, est_ckpt2, est_segment, est_out);
    if (*simulate) return cmd_simulate(sim_spec, sim_profile, sim_grid, sim_seed, sim_sigma, sim_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
