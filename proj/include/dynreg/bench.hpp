#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dynreg/baseline.hpp"
#include "dynreg/cm.hpp"
#include "dynreg/em.hpp"
#include "dynreg/errors.hpp"
#include "dynreg/io.hpp"
#include "dynreg/model.hpp"
#include "dynreg/simulate.hpp"

namespace dynreg {

enum class Estimator { cm, cm_intercept, em, full_state };

inline std::string estimator_tag(Estimator e) {
  switch (e) {
    case Estimator::cm: return "cm";
    case Estimator::cm_intercept: return "cm_intercept";
    case Estimator::em: return "em";
    case Estimator::full_state: return "full_state";
  }
  return "?";
}

inline std::optional<Estimator> estimator_from_tag(const std::string& tag) {
  if (tag == "cm") return Estimator::cm;
  if (tag == "cm_intercept") return Estimator::cm_intercept;
  if (tag == "em") return Estimator::em;
  if (tag == "full_state") return Estimator::full_state;
  return std::nullopt;
}

// Declarative Monte Carlo experiment: a ground-truth system, a grid of
// horizons, and the estimators to run on shared per-(T, trial) trajectories.
struct ExperimentConfig {
  SystemParams params;
  std::vector<long> t_grid;
  int trials = 32;
  std::uint64_t base_seed = 0;
  std::vector<Estimator> estimators = {Estimator::cm};
  double delta = 0.1;
  std::optional<double> gamma;  // enables theoretical-bound columns when set
  double c_convention = 1.0;
  std::filesystem::path output_dir = "out";
  // Off by default so that identical configs produce byte-identical output
  // files; when enabled, the wall_time_ms column carries measured times and
  // the determinism guarantee no longer covers it.
  bool record_timing = false;
};

struct TrialRecord {
  std::string estimator;
  long horizon = 0;  // T
  int trial = 0;
  std::uint64_t seed = 0;
  std::uint64_t traj_hash = 0;
  std::optional<double> err_a;      // ||a_hat - A||_F
  std::optional<double> err_sigma;  // ||sigma_hat - sigma_inf||_F
  std::optional<double> err_cross;  // ||m_hat - A sigma_inf||_F
  double wall_time_ms = 0.0;
  std::string status = "ok";
};

struct RateSummary {
  std::string estimator;
  std::optional<double> slope;
  std::optional<double> intercept;
  std::map<long, double> per_t_median;
  std::map<long, double> per_t_quantile90;
  std::map<long, long> per_t_n_ok;
  std::map<long, double> bound_per_t;     // populated when gamma is set
  std::map<long, double> per_t_coverage;  // fraction of ok trials with err_a <= bound
};

struct ExperimentResult {
  std::vector<TrialRecord> records;
  std::vector<RateSummary> summaries;
};

namespace detail {

inline long require_integer(const nlohmann::json& j, const std::string& path) {
  if (j.is_number_integer()) return j.get<long>();
  if (j.is_number_float()) {
    const double v = j.get<double>();
    const long l = static_cast<long>(v);
    if (static_cast<double>(l) == v) return l;
  }
  throw validation_error("config", path + ": expected an integer");
}

inline double require_number(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) throw validation_error("config", path + ": expected a number");
  return j.get<double>();
}

inline void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                                const std::string& prefix) {
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key())) {
      throw validation_error("config", prefix + item.key() + ": unknown key");
    }
  }
}

}  // namespace detail

// Parses and validates the experiment-config JSON document. `params` and
// `t_grid` are required; everything else has defaults. Unknown keys are
// rejected with their field path.
inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("config", std::string("config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) {
    throw validation_error("config", "config: top level must be an object");
  }
  detail::reject_unknown_keys(
      j,
      {"params", "t_grid", "trials", "base_seed", "estimators", "delta", "gamma",
       "c_convention", "output_dir", "record_timing"},
      "");

  if (!j.contains("params") || !j["params"].is_object()) {
    throw validation_error("config", "params: required object is missing");
  }
  const auto& jp = j["params"];
  detail::reject_unknown_keys(jp, {"dim", "A", "sigma_w", "sigma_eps"}, "params.");
  for (const char* key : {"dim", "A", "sigma_w", "sigma_eps"}) {
    if (!jp.contains(key)) {
      throw validation_error("config", std::string("params.") + key + ": missing");
    }
  }

  ExperimentConfig cfg;
  cfg.params.dim = detail::require_integer(jp["dim"], "params.dim");
  cfg.params.A = matrix_from_json(jp["A"], "params.A");
  cfg.params.sigma_w = matrix_from_json(jp["sigma_w"], "params.sigma_w");
  cfg.params.sigma_eps = detail::require_number(jp["sigma_eps"], "params.sigma_eps");
  cfg.params = validate_params(cfg.params);

  if (!j.contains("t_grid") || !j["t_grid"].is_array() || j["t_grid"].empty()) {
    throw validation_error("config", "t_grid: required non-empty array is missing");
  }
  for (const auto& item : j["t_grid"]) {
    const long t = detail::require_integer(item, "t_grid");
    if (t < 1) throw validation_error("config", "t_grid: entries must be positive");
    if (!cfg.t_grid.empty() && t <= cfg.t_grid.back()) {
      throw validation_error("config", "t_grid: entries must be strictly ascending");
    }
    cfg.t_grid.push_back(t);
  }

  if (j.contains("trials")) {
    const long trials = detail::require_integer(j["trials"], "trials");
    if (trials < 1) throw validation_error("config", "trials: must be >= 1");
    cfg.trials = static_cast<int>(trials);
  }
  if (j.contains("base_seed")) {
    const long seed = detail::require_integer(j["base_seed"], "base_seed");
    if (seed < 0) throw validation_error("config", "base_seed: must be non-negative");
    cfg.base_seed = static_cast<std::uint64_t>(seed);
  }
  if (j.contains("estimators")) {
    if (!j["estimators"].is_array() || j["estimators"].empty()) {
      throw validation_error("config", "estimators: must be a non-empty array");
    }
    cfg.estimators.clear();
    for (const auto& item : j["estimators"]) {
      if (!item.is_string()) throw validation_error("config", "estimators: entries must be strings");
      const auto est = estimator_from_tag(item.get<std::string>());
      if (!est) {
        throw validation_error("config",
                               "estimators: unknown tag '" + item.get<std::string>() + "'");
      }
      if (std::find(cfg.estimators.begin(), cfg.estimators.end(), *est) != cfg.estimators.end()) {
        throw validation_error("config", "estimators: duplicate tag '" + estimator_tag(*est) + "'");
      }
      cfg.estimators.push_back(*est);
    }
  }
  if (j.contains("delta")) {
    cfg.delta = detail::require_number(j["delta"], "delta");
  }
  if (!(cfg.delta > 0.0) || !(cfg.delta < 1.0)) {
    throw validation_error("config", "delta: must lie in (0, 1)");
  }
  if (j.contains("gamma")) {
    const double gamma = detail::require_number(j["gamma"], "gamma");
    const double rho = spectral_radius(cfg.params.A);
    if (!(gamma > rho) || !(gamma < 1.0)) {
      std::ostringstream msg;
      msg << "gamma: must lie in (rho(A), 1) = (" << rho << ", 1)";
      throw validation_error("config", msg.str());
    }
    cfg.gamma = gamma;
  }
  if (j.contains("c_convention")) {
    cfg.c_convention = detail::require_number(j["c_convention"], "c_convention");
    if (!(cfg.c_convention > 0.0)) {
      throw validation_error("config", "c_convention: must be positive");
    }
  }
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string() || j["output_dir"].get<std::string>().empty()) {
      throw validation_error("config", "output_dir: must be a non-empty string");
    }
    cfg.output_dir = j["output_dir"].get<std::string>();
  }
  if (j.contains("record_timing")) {
    if (!j["record_timing"].is_boolean()) {
      throw validation_error("config", "record_timing: must be a boolean");
    }
    cfg.record_timing = j["record_timing"].get<bool>();
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["params"] = {{"dim", cfg.params.dim},
                 {"A", matrix_to_json(cfg.params.A)},
                 {"sigma_w", matrix_to_json(cfg.params.sigma_w)},
                 {"sigma_eps", cfg.params.sigma_eps}};
  j["t_grid"] = cfg.t_grid;
  j["trials"] = cfg.trials;
  j["base_seed"] = cfg.base_seed;
  nlohmann::json tags = nlohmann::json::array();
  for (Estimator e : cfg.estimators) tags.push_back(estimator_tag(e));
  j["estimators"] = std::move(tags);
  j["delta"] = cfg.delta;
  if (cfg.gamma) j["gamma"] = *cfg.gamma;
  j["c_convention"] = cfg.c_convention;
  j["output_dir"] = cfg.output_dir.string();
  j["record_timing"] = cfg.record_timing;
  return j;
}

// FNV-1a over the raw array bytes; used to verify that paired estimators
// consumed the identical trajectory.
inline std::uint64_t trajectory_hash(const Trajectory& traj) {
  std::uint64_t h = 14695981039346656037ULL;
  auto absorb = [&h](const double* data, std::size_t count) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < count * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  absorb(traj.xs.data(), static_cast<std::size_t>(traj.xs.size()));
  absorb(traj.ys.data(), static_cast<std::size_t>(traj.ys.size()));
  if (traj.betas) absorb(traj.betas->data(), static_cast<std::size_t>(traj.betas->size()));
  return h;
}

// Default EM initialization: the covariance-method estimate, spectrally
// rescaled to radius 0.95 if it comes out unstable.
inline Mat cm_warm_start(const Trajectory& traj, double sigma_eps) {
  const CMEstimate cm = estimate_cm(traj, sigma_eps);
  Mat a0 = cm.a_hat;
  const double rho = spectral_radius(a0);
  if (rho >= 1.0) a0 *= 0.95 / rho;
  return a0;
}

// OLS of log2(median) on log2(T). Needs at least two grid points with
// positive medians.
inline std::pair<double, double> fit_rate_slope(const std::map<long, double>& per_t_median) {
  if (per_t_median.size() < 2) {
    throw validation_error("domain", "fit_rate_slope: need at least 2 grid points");
  }
  double mean_u = 0.0, mean_v = 0.0;
  for (const auto& [t, median] : per_t_median) {
    if (!(median > 0.0)) {
      throw validation_error("domain", "fit_rate_slope: medians must be positive");
    }
    mean_u += std::log2(static_cast<double>(t));
    mean_v += std::log2(median);
  }
  const double n = static_cast<double>(per_t_median.size());
  mean_u /= n;
  mean_v /= n;
  double suu = 0.0, suv = 0.0;
  for (const auto& [t, median] : per_t_median) {
    const double du = std::log2(static_cast<double>(t)) - mean_u;
    const double dv = std::log2(median) - mean_v;
    suu += du * du;
    suv += du * dv;
  }
  const double slope = suv / suu;
  return {slope, mean_v - slope * mean_u};
}

namespace detail {

inline double median_of_sorted(const std::vector<double>& s) {
  const std::size_t n = s.size();
  return (n % 2 == 1) ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

// Quantile with linear interpolation between order statistics.
inline double quantile_of_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= s.size()) return s.back();
  const double frac = pos - static_cast<double>(lo);
  return s[lo] * (1.0 - frac) + s[lo + 1] * frac;
}

inline TrialRecord run_one_estimator(Estimator which, const Trajectory& traj,
                                     const ExperimentConfig& cfg, const Mat& sigma_inf,
                                     const Mat& true_cross) {
  TrialRecord rec;
  rec.estimator = estimator_tag(which);
  rec.horizon = traj.horizon();
  rec.seed = traj.seed;
  rec.traj_hash = trajectory_hash(traj);
  const auto start = std::chrono::steady_clock::now();
  try {
    switch (which) {
      case Estimator::cm:
      case Estimator::cm_intercept: {
        const auto known = which == Estimator::cm
                               ? std::optional<double>(cfg.params.sigma_eps)
                               : std::nullopt;
        const CMEstimate est = estimate_cm(traj, known);
        rec.err_a = (est.a_hat - cfg.params.A).norm();
        rec.err_sigma = (est.sigma_hat - sigma_inf).norm();
        rec.err_cross = (est.m_hat - true_cross).norm();
        break;
      }
      case Estimator::em: {
        const Mat a0 = cm_warm_start(traj, cfg.params.sigma_eps);
        const EMEstimate est =
            em_fit(traj, cfg.params.sigma_w, cfg.params.sigma_eps, a0);
        rec.err_a = (est.a_hat - cfg.params.A).norm();
        break;
      }
      case Estimator::full_state: {
        if (!traj.betas) {
          throw validation_error("missing_states", "full_state: trajectory lacks states");
        }
        const Mat a_hat = ols_full_state(*traj.betas);
        rec.err_a = (a_hat - cfg.params.A).norm();
        break;
      }
    }
  } catch (const error& e) {
    rec.status = e.tag();
    rec.err_a.reset();
    rec.err_sigma.reset();
    rec.err_cross.reset();
  }
  if (cfg.record_timing) {
    rec.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
  }
  return rec;
}

}  // namespace detail

// Runs the full sweep. For every horizon T and trial i the trajectory is
// simulated once with seed base_seed + i and shared by all estimators, so the
// per-trial comparison is paired. Estimator failures are recorded in the
// trial's status, not raised. The returned records and summaries are a pure
// function of the config: trials may execute on any number of threads and the
// result is identical.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, int threads = 1) {
  const SystemParams params = validate_params(cfg.params);
  if (cfg.t_grid.empty() || cfg.trials < 1 || cfg.estimators.empty()) {
    throw validation_error("config", "run_experiment: empty t_grid, trials, or estimators");
  }
  const StationarySolution stat = lyapunov_solve(params.A, params.sigma_w);
  const Mat true_cross = params.A * stat.sigma_inf;
  const bool keep_states =
      std::find(cfg.estimators.begin(), cfg.estimators.end(), Estimator::full_state) !=
      cfg.estimators.end();

  struct WorkItem {
    long horizon;
    int trial;
  };
  std::vector<WorkItem> items;
  items.reserve(cfg.t_grid.size() * static_cast<std::size_t>(cfg.trials));
  for (long t : cfg.t_grid) {
    for (int i = 0; i < cfg.trials; ++i) items.push_back({t, i});
  }

  std::vector<std::vector<TrialRecord>> slots(items.size());
  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t idx = cursor.fetch_add(1);
      if (idx >= items.size()) return;
      const WorkItem& item = items[idx];
      const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(item.trial);
      std::vector<TrialRecord>& out = slots[idx];
      try {
        const Trajectory traj =
            simulate_trajectory(params, item.horizon, seed, keep_states);
        for (Estimator est : cfg.estimators) {
          TrialRecord rec =
              detail::run_one_estimator(est, traj, cfg, stat.sigma_inf, true_cross);
          rec.trial = item.trial;
          out.push_back(std::move(rec));
        }
      } catch (const error& e) {
        for (Estimator est : cfg.estimators) {
          TrialRecord rec;
          rec.estimator = estimator_tag(est);
          rec.horizon = item.horizon;
          rec.trial = item.trial;
          rec.seed = seed;
          rec.status = e.tag();
          out.push_back(std::move(rec));
        }
      }
    }
  };

  const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(items.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ExperimentResult result;
  for (auto& slot : slots) {
    for (auto& rec : slot) result.records.push_back(std::move(rec));
  }
  std::sort(result.records.begin(), result.records.end(),
            [](const TrialRecord& a, const TrialRecord& b) {
              return std::tie(a.estimator, a.horizon, a.trial) <
                     std::tie(b.estimator, b.horizon, b.trial);
            });

  // Theoretical bounds per horizon, shared by all estimator summaries.
  std::map<long, double> bounds;
  if (cfg.gamma) {
    for (long t : cfg.t_grid) {
      bounds[t] =
          theoretical_bound(params, stat, t, cfg.delta, *cfg.gamma, cfg.c_convention).bound_a;
    }
  }

  std::vector<std::string> tags;
  for (Estimator e : cfg.estimators) tags.push_back(estimator_tag(e));
  std::sort(tags.begin(), tags.end());
  for (const std::string& tag : tags) {
    RateSummary summary;
    summary.estimator = tag;
    for (long t : cfg.t_grid) {
      std::vector<double> errs;
      long covered = 0;
      for (const TrialRecord& rec : result.records) {
        if (rec.estimator != tag || rec.horizon != t || rec.status != "ok") continue;
        errs.push_back(*rec.err_a);
        if (cfg.gamma && *rec.err_a <= bounds[t]) ++covered;
      }
      summary.per_t_n_ok[t] = static_cast<long>(errs.size());
      if (cfg.gamma) summary.bound_per_t[t] = bounds[t];
      if (errs.empty()) continue;  // degenerate cell: medians stay absent
      std::sort(errs.begin(), errs.end());
      summary.per_t_median[t] = detail::median_of_sorted(errs);
      summary.per_t_quantile90[t] = detail::quantile_of_sorted(errs, 0.9);
      if (cfg.gamma) {
        summary.per_t_coverage[t] =
            static_cast<double>(covered) / static_cast<double>(errs.size());
      }
    }
    try {
      const auto [slope, intercept] = fit_rate_slope(summary.per_t_median);
      summary.slope = slope;
      summary.intercept = intercept;
    } catch (const error&) {
      // fewer than two usable grid points: leave the fit absent
    }
    result.summaries.push_back(std::move(summary));
  }
  return result;
}

namespace detail {

inline std::string optional_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

}  // namespace detail

inline std::string trials_csv(const std::vector<TrialRecord>& records) {
  std::string out = "estimator,T,trial,seed,traj_hash,err_A,err_sigma,err_cross,wall_time_ms,status\n";
  char hash_buf[17];
  for (const TrialRecord& rec : records) {
    std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                  static_cast<unsigned long long>(rec.traj_hash));
    out += rec.estimator;
    out += ',' + std::to_string(rec.horizon);
    out += ',' + std::to_string(rec.trial);
    out += ',' + std::to_string(rec.seed);
    out += ',';
    out += hash_buf;
    out += ',' + detail::optional_field(rec.err_a);
    out += ',' + detail::optional_field(rec.err_sigma);
    out += ',' + detail::optional_field(rec.err_cross);
    out += ',' + format_double(rec.wall_time_ms);
    out += ',' + rec.status;
    out += '\n';
  }
  return out;
}

inline std::string summary_csv(const std::vector<RateSummary>& summaries,
                               const std::vector<long>& t_grid) {
  std::string out = "estimator,T,n_ok,median_err_A,q90_err_A,bound_A,coverage\n";
  for (const RateSummary& summary : summaries) {
    for (long t : t_grid) {
      out += summary.estimator;
      out += ',' + std::to_string(t);
      out += ',' + std::to_string(summary.per_t_n_ok.count(t) ? summary.per_t_n_ok.at(t) : 0);
      out += ',';
      if (summary.per_t_median.count(t)) out += format_double(summary.per_t_median.at(t));
      out += ',';
      if (summary.per_t_quantile90.count(t)) out += format_double(summary.per_t_quantile90.at(t));
      out += ',';
      if (summary.bound_per_t.count(t)) out += format_double(summary.bound_per_t.at(t));
      out += ',';
      if (summary.per_t_coverage.count(t)) out += format_double(summary.per_t_coverage.at(t));
      out += '\n';
    }
  }
  return out;
}

inline void to_json(nlohmann::json& j, const RateSummary& summary) {
  auto map_to_json = [](const auto& m) {
    nlohmann::json obj = nlohmann::json::object();
    for (const auto& [t, v] : m) obj[std::to_string(t)] = v;
    return obj;
  };
  j = nlohmann::json::object();
  j["estimator"] = summary.estimator;
  j["slope"] = summary.slope ? nlohmann::json(*summary.slope) : nlohmann::json(nullptr);
  j["intercept"] =
      summary.intercept ? nlohmann::json(*summary.intercept) : nlohmann::json(nullptr);
  j["per_T_median"] = map_to_json(summary.per_t_median);
  j["per_T_q90"] = map_to_json(summary.per_t_quantile90);
  j["per_T_n_ok"] = map_to_json(summary.per_t_n_ok);
  if (!summary.bound_per_t.empty()) j["bound_per_T"] = map_to_json(summary.bound_per_t);
  if (!summary.per_t_coverage.empty()) j["coverage_per_T"] = map_to_json(summary.per_t_coverage);
}

// Writes trials.csv, summary.csv, rates.json, and config.echo.json into
// cfg.output_dir. Each file is written to a temp sibling and renamed.
inline void write_outputs(const std::vector<TrialRecord>& records,
                          const std::vector<RateSummary>& summaries,
                          const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw io_error("cannot create " + cfg.output_dir.string() + ": " + ec.message());

  atomic_write(cfg.output_dir / "trials.csv", trials_csv(records));
  atomic_write(cfg.output_dir / "summary.csv", summary_csv(summaries, cfg.t_grid));
  atomic_write(cfg.output_dir / "config.echo.json", config_to_json(cfg).dump(2) + "\n");
  atomic_write(cfg.output_dir / "rates.json", nlohmann::json(summaries).dump(2) + "\n");
}

}  // namespace dynreg
