// Command-line front end: simulate trajectories, run estimators on CSV data,
// evaluate theoretical bounds, and drive Monte Carlo benchmark sweeps.
//
// Exit codes: 0 success, 2 config/validation error, 3 numerical/degeneracy
// error, 4 I/O error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dynreg/dynreg.hpp"

namespace {

using nlohmann::json;

dynreg::Mat read_init_matrix(const std::filesystem::path& path, dynreg::Index dim) {
  std::ifstream in(path);
  if (!in) throw dynreg::io_error("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw dynreg::validation_error("config",
                                   path.string() + ": malformed JSON: " + e.what());
  }
  const json& mat = j.is_object() && j.contains("A") ? j["A"] : j;
  dynreg::Mat a = dynreg::matrix_from_json(mat, path.string());
  if (a.rows() != dim || a.cols() != dim) {
    throw dynreg::validation_error("dimension",
                                   path.string() + ": init matrix has the wrong shape");
  }
  return a;
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  dynreg::atomic_write(path, j.dump(2) + "\n");
}

int run_simulate(const std::string& config_path, long horizon, std::uint64_t seed,
                 bool keep_states, const std::string& out_path) {
  const auto cfg = dynreg::load_config(config_path);
  const auto traj = dynreg::simulate_trajectory(cfg.params, horizon, seed, keep_states);
  dynreg::write_trajectory_csv(out_path, traj);
  std::cout << "wrote " << out_path << " (T=" << traj.horizon() << ", d=" << traj.dim()
            << ")\n";
  return 0;
}

int run_estimate(const std::string& method, const std::string& data_path,
                 std::optional<double> sigma_eps, const std::string& config_path,
                 const std::string& init_path, int max_iters, double tol,
                 const std::string& out_path) {
  const auto traj = dynreg::read_trajectory_csv(data_path);
  json out;

  if (method == "cm" || method == "cm-intercept") {
    std::optional<double> known;
    if (method == "cm") {
      if (!sigma_eps) {
        throw dynreg::validation_error(
            "config", "estimate --method cm requires --sigma-eps (use cm-intercept otherwise)");
      }
      known = *sigma_eps;
    }
    out = dynreg::estimate_cm(traj, known);
  } else if (method == "em") {
    if (config_path.empty()) {
      throw dynreg::validation_error(
          "config", "estimate --method em requires --config for sigma_w and sigma_eps");
    }
    const auto cfg = dynreg::load_config(config_path);
    const double eps = sigma_eps ? *sigma_eps : cfg.params.sigma_eps;
    dynreg::Mat a0;
    if (!init_path.empty()) {
      a0 = read_init_matrix(init_path, traj.dim());
    } else {
      a0 = dynreg::cm_warm_start(traj, eps);
    }
    out = dynreg::em_fit(traj, cfg.params.sigma_w, eps, a0, max_iters, tol);
  } else if (method == "full-state") {
    if (!traj.betas) {
      throw dynreg::validation_error(
          "missing_states", "estimate --method full-state needs beta_* columns in the data");
    }
    out = json{{"a_hat", dynreg::matrix_to_json(dynreg::ols_full_state(*traj.betas))}};
  } else {
    throw dynreg::validation_error("config", "unknown method '" + method + "'");
  }

  write_json_file(out_path, out);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int run_bench(const std::string& config_path, int threads) {
  const auto cfg = dynreg::load_config(config_path);
  const auto result = dynreg::run_experiment(cfg, threads);
  dynreg::write_outputs(result.records, result.summaries, cfg);
  for (const auto& summary : result.summaries) {
    std::cout << summary.estimator << ": ";
    if (summary.slope) {
      std::cout << "slope=" << *summary.slope << " intercept=" << *summary.intercept;
    } else {
      std::cout << "slope unavailable (fewer than 2 usable grid points)";
    }
    std::cout << "\n";
  }
  std::cout << "outputs in " << cfg.output_dir.string() << "\n";
  return 0;
}

int run_bound(const std::string& config_path, long horizon, double delta, double gamma,
              std::optional<double> c_convention) {
  const auto cfg = dynreg::load_config(config_path);
  const auto stat = dynreg::lyapunov_solve(cfg.params.A, cfg.params.sigma_w);
  const double c = c_convention ? *c_convention : cfg.c_convention;
  const auto bound = dynreg::theoretical_bound(cfg.params, stat, horizon, delta, gamma, c);
  json j{{"gamma", bound.gamma},          {"tau", bound.tau},
         {"c_convention", bound.c_convention}, {"bound_sigma", bound.bound_sigma},
         {"bound_cross", bound.bound_cross},   {"bound_A", bound.bound_a},
         {"min_T", bound.min_t}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"identification of latent linear dynamics in time-varying regression"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, init_path;
  std::string method = "cm-intercept";  // the default needs no noise knowledge
  long horizon = 0;
  std::uint64_t seed = 0;
  bool keep_states = false;
  double delta = 0.1, gamma = 0.0, tol = 1e-6;
  std::optional<double> sigma_eps, c_convention;
  int threads = 1, max_iters = 500;

  auto* sim = app.add_subcommand("simulate", "simulate one trajectory to CSV");
  sim->add_option("--config", config_path, "experiment config JSON")->required();
  sim->add_option("--T", horizon, "trajectory length")->required();
  sim->add_option("--seed", seed, "trajectory seed")->required();
  sim->add_flag("--keep-states", keep_states, "retain hidden states as beta_* columns");
  sim->add_option("--out", out_path, "output CSV path")->required();

  auto* est = app.add_subcommand("estimate", "run one estimator on a trajectory CSV");
  est->add_option("--method", method, "cm|cm-intercept|em|full-state")
      ->capture_default_str();
  est->add_option("--data", data_path, "trajectory CSV")->required();
  est->add_option("--sigma-eps", sigma_eps, "known observation-noise std");
  est->add_option("--config", config_path, "config JSON (required for em: sigma_w, sigma_eps)");
  est->add_option("--init", init_path, "JSON file with the EM initial matrix");
  est->add_option("--max-iters", max_iters, "EM iteration cap");
  est->add_option("--tol", tol, "EM convergence tolerance (Frobenius)");
  est->add_option("--out", out_path, "output JSON path")->required();

  auto* bench = app.add_subcommand("bench", "run a Monte Carlo sweep from a config");
  bench->add_option("--config", config_path, "experiment config JSON")->required();
  bench->add_option("--threads", threads, "worker threads (default 1)");

  auto* bound = app.add_subcommand("bound", "evaluate the theoretical error bounds");
  bound->add_option("--config", config_path, "experiment config JSON")->required();
  bound->add_option("--T", horizon, "horizon")->required();
  bound->add_option("--delta", delta, "failure probability")->required();
  bound->add_option("--gamma", gamma, "decay rate in (rho(A), 1)")->required();
  bound->add_option("--c", c_convention, "constant convention (default: config value)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return run_simulate(config_path, horizon, seed, keep_states, out_path);
    if (est->parsed())
      return run_estimate(method, data_path, sigma_eps, config_path, init_path, max_iters,
                          tol, out_path);
    if (bench->parsed()) return run_bench(config_path, threads);
    if (bound->parsed()) return run_bound(config_path, horizon, delta, gamma, c_convention);
  } catch (const dynreg::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
