#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dynreg/errors.hpp"
#include "dynreg/io.hpp"
#include "dynreg/linalg.hpp"
#include "dynreg/model.hpp"
#include "dynreg/rng.hpp"

namespace dynreg {

// One realized sequence {(x_t, y_t)} of the model, with the hidden states
// optionally retained for diagnostics.
struct Trajectory {
  Mat xs;                    // horizon x d feature rows
  Vec ys;                    // horizon labels
  std::optional<Mat> betas;  // horizon x d hidden states when requested
  std::uint64_t seed = 0;

  Index horizon() const { return ys.size(); }
  Index dim() const { return xs.cols(); }
};

// Deterministic PSD square-root factor. Diagonal inputs factor entrywise;
// everything else goes through a symmetric eigendecomposition with the
// eigenvalues clamped at zero.
inline Mat psd_sqrt(const Mat& cov) {
  if (!is_square(cov)) {
    throw validation_error("dimension", "psd_sqrt: matrix must be square");
  }
  if (asymmetry(cov) > 1e-12) {
    throw validation_error("asymmetric", "psd_sqrt: matrix must be symmetric");
  }
  const Index d = cov.rows();
  bool diagonal = true;
  for (Index i = 0; i < d && diagonal; ++i) {
    for (Index j = 0; j < d; ++j) {
      if (i != j && cov(i, j) != 0.0) {
        diagonal = false;
        break;
      }
    }
  }
  if (diagonal) {
    if (cov.diagonal().minCoeff() < -1e-10) {
      std::ostringstream msg;
      msg << "psd_sqrt: covariance is not PSD, lambda_min = " << cov.diagonal().minCoeff();
      throw validation_error("not_psd", msg.str());
    }
    Mat l = Mat::Zero(d, d);
    for (Index i = 0; i < d; ++i) l(i, i) = std::sqrt(std::max(0.0, cov(i, i)));
    return l;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  if (es.eigenvalues().minCoeff() < -1e-10) {
    std::ostringstream msg;
    msg << "psd_sqrt: covariance is not PSD, lambda_min = " << es.eigenvalues().minCoeff();
    throw validation_error("not_psd", msg.str());
  }
  Vec clamped = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
}

// L z with z a vector of fresh standard normals; exactly d draws consumed.
inline Vec gaussian_vector(const Mat& cov, SplitMix64& rng) {
  const Mat l = psd_sqrt(cov);
  Vec z(cov.rows());
  for (Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return l * z;
}

// Stream seed for a trajectory. The horizon is mixed in so that trajectories
// of different lengths drawn from the same seed are independent streams
// rather than prefixes of one another.
inline std::uint64_t trajectory_stream_seed(std::uint64_t seed, Index horizon) {
  return SplitMix64::mix(seed + SplitMix64::mix(static_cast<std::uint64_t>(horizon)));
}

// Simulates the model for `horizon` steps with beta_0 drawn from the
// stationary distribution N(0, sigma_inf).
//
// Draw order is fixed: first beta_0 (d normals), then per step t the feature
// x_t (d normals), the observation noise eps_t (1 normal, consumed even when
// sigma_eps = 0), and the process noise w_t (d normals). Identical
// (params, horizon, seed) arguments reproduce bit-identical arrays.
inline Trajectory simulate_trajectory(const SystemParams& params, Index horizon,
                                      std::uint64_t seed, bool keep_states) {
  const SystemParams p = validate_params(params);
  if (horizon < 1) {
    throw validation_error("domain", "simulate_trajectory: horizon must be positive");
  }
  const StationarySolution stat = lyapunov_solve(p.A, p.sigma_w);  // throws if unstable
  const Mat l_inf = psd_sqrt(symmetrized(stat.sigma_inf));
  const Mat l_w = psd_sqrt(p.sigma_w);
  const Index d = p.dim;

  SplitMix64 rng(trajectory_stream_seed(seed, horizon));
  auto draw = [&](const Mat& l) {
    Vec z(d);
    for (Index i = 0; i < d; ++i) z(i) = rng.normal();
    return Vec(l * z);
  };

  Trajectory traj;
  traj.seed = seed;
  traj.xs.resize(horizon, d);
  traj.ys.resize(horizon);
  if (keep_states) traj.betas = Mat(horizon, d);

  Vec beta = draw(l_inf);
  for (Index t = 0; t < horizon; ++t) {
    Vec x(d);
    for (Index i = 0; i < d; ++i) x(i) = rng.normal();
    const double eps = p.sigma_eps * rng.normal();
    traj.xs.row(t) = x.transpose();
    traj.ys(t) = x.dot(beta) + eps;
    if (keep_states) traj.betas->row(t) = beta.transpose();
    const Vec w = draw(l_w);
    beta = p.A * beta + w;
  }
  return traj;
}

// CSV export: header `t,y,x_0,...,x_{d-1}[,beta_0,...,beta_{d-1}]`, one row
// per step, 17-significant-digit floats.
inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  const Index d = traj.dim();
  std::string out = "t,y";
  for (Index j = 0; j < d; ++j) out += ",x_" + std::to_string(j);
  if (traj.betas) {
    for (Index j = 0; j < d; ++j) out += ",beta_" + std::to_string(j);
  }
  out += '\n';
  for (Index t = 0; t < traj.horizon(); ++t) {
    out += std::to_string(t);
    out += ',';
    out += format_double(traj.ys(t));
    for (Index j = 0; j < d; ++j) {
      out += ',';
      out += format_double(traj.xs(t, j));
    }
    if (traj.betas) {
      for (Index j = 0; j < d; ++j) {
        out += ',';
        out += format_double((*traj.betas)(t, j));
      }
    }
    out += '\n';
  }
  atomic_write(path, out);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw io_error(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "t" || header[1] != "y") {
    throw io_error(path.string() + ": expected header t,y,x_0,...");
  }
  Index d = 0;
  std::size_t col = 2;
  while (col < header.size() && header[col] == "x_" + std::to_string(d)) {
    ++d;
    ++col;
  }
  if (d == 0) throw io_error(path.string() + ": no x_* columns found");
  bool has_betas = false;
  if (col < header.size()) {
    Index b = 0;
    while (col < header.size() && header[col] == "beta_" + std::to_string(b)) {
      ++b;
      ++col;
    }
    if (b != d || col != header.size()) {
      throw io_error(path.string() + ": malformed header columns");
    }
    has_betas = true;
  }

  std::vector<double> ys;
  std::vector<double> xs;
  std::vector<double> betas;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    const std::size_t expected = 2 + static_cast<std::size_t>(d) * (has_betas ? 2 : 1);
    if (fields.size() != expected) {
      throw io_error(path.string() + ": row has " + std::to_string(fields.size()) +
                     " fields, expected " + std::to_string(expected));
    }
    ys.push_back(parse_double(fields[1]));
    for (Index j = 0; j < d; ++j) xs.push_back(parse_double(fields[2 + j]));
    if (has_betas) {
      for (Index j = 0; j < d; ++j) betas.push_back(parse_double(fields[2 + d + j]));
    }
  }
  const Index horizon = static_cast<Index>(ys.size());
  if (horizon == 0) throw io_error(path.string() + ": no data rows");

  Trajectory traj;
  traj.ys = Eigen::Map<const Vec>(ys.data(), horizon);
  traj.xs = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      xs.data(), horizon, d);
  if (has_betas) {
    traj.betas = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        betas.data(), horizon, d);
  }
  return traj;
}

}  // namespace dynreg
