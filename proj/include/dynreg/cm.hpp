#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "dynreg/errors.hpp"
#include "dynreg/io.hpp"
#include "dynreg/linalg.hpp"
#include "dynreg/simulate.hpp"
#include "dynreg/svec.hpp"

namespace dynreg {

// Spectral diagnostics of the two regression designs and of the recovered
// stationary covariance.
struct DesignDiagnostics {
  double lambda_min_sym = 0.0;        // lambda_min of the symmetric-design Gram
  double lambda_min_cross = 0.0;      // lambda_min of the cross-design Gram
  double lambda_min_sigma_hat = 0.0;  // lambda_min of sigma_hat
  double condition_sigma_hat = 0.0;   // |lambda|_max / |lambda|_min of sigma_hat
  double residual_mean_sym = 0.0;     // mean fitted residual, symmetric design
  double residual_mean_cross = 0.0;   // mean fitted residual, cross design
};

// Output of the covariance method: the two regression solutions and the
// transition-matrix estimate assembled from them.
struct CMEstimate {
  Mat sigma_hat;  // estimate of the stationary covariance (exactly symmetric)
  Mat m_hat;      // estimate of the cross moment A * sigma_inf
  Mat a_hat;      // transition-matrix estimate, defined by solving a_hat * sigma_hat = m_hat
  std::optional<double> sigma_eps_sq_hat;  // fitted intercept when sigma_eps is unknown
  DesignDiagnostics diag;
};

struct Design {
  Mat features;
  Vec targets;
};

// Row t is svec(x_t x_t'); the target is y_t^2 minus sigma_eps^2 when the
// noise variance is known, and the raw y_t^2 otherwise (the variance is then
// absorbed by an intercept in the solve).
inline Design build_sym_design(const Trajectory& traj, std::optional<double> sigma_eps_known) {
  const Index horizon = traj.horizon();
  const Index d = traj.dim();
  if (horizon < 1) {
    throw validation_error("domain", "build_sym_design: empty trajectory");
  }
  const double offset =
      sigma_eps_known ? (*sigma_eps_known) * (*sigma_eps_known) : 0.0;
  const double root2 = std::sqrt(2.0);
  Design design;
  design.features.resize(horizon, d * (d + 1) / 2);
  design.targets.resize(horizon);
  for (Index t = 0; t < horizon; ++t) {
    Index k = 0;
    for (Index i = 0; i < d; ++i) {
      for (Index j = i; j < d; ++j) {
        const double v = traj.xs(t, i) * traj.xs(t, j);
        design.features(t, k++) = (i == j) ? v : root2 * v;
      }
    }
    design.targets(t) = traj.ys(t) * traj.ys(t) - offset;
  }
  return design;
}

// Row t is vec(x_{t+1} x_t') under the column-major vec convention, so the
// regressed coefficient matrix M satisfies y_t y_{t+1} ~ x_{t+1}' M x_t.
inline Design build_cross_design(const Trajectory& traj) {
  const Index horizon = traj.horizon();
  const Index d = traj.dim();
  if (horizon < 2) {
    throw numerical_error("insufficient_data",
                          "build_cross_design: need at least 2 steps");
  }
  Design design;
  design.features.resize(horizon - 1, d * d);
  design.targets.resize(horizon - 1);
  for (Index t = 0; t + 1 < horizon; ++t) {
    // vec(x_{t+1} x_t'): entry (i, j) lands at position i + j * d.
    for (Index j = 0; j < d; ++j) {
      for (Index i = 0; i < d; ++i) {
        design.features(t, i + j * d) = traj.xs(t + 1, i) * traj.xs(t, j);
      }
    }
    design.targets(t) = traj.ys(t) * traj.ys(t + 1);
  }
  return design;
}

struct LeastSquaresSolution {
  Vec coefficients;
  std::optional<double> intercept;
  double gram_lambda_min = 0.0;
};

// Ordinary least squares through the normal equations. The Gram matrix of the
// (optionally intercept-augmented) design is formed explicitly; a rank
// deficient Gram is a hard error, never a pseudo-inverse.
inline LeastSquaresSolution least_squares_solve(const Mat& features, const Vec& targets,
                                                bool with_intercept) {
  const Index n = features.rows();
  const Index k = features.cols();
  if (targets.size() != n) {
    throw validation_error("dimension", "least_squares_solve: rows and targets disagree");
  }
  const Index cols = k + (with_intercept ? 1 : 0);
  if (n < cols) {
    std::ostringstream msg;
    msg << "least_squares_solve: " << n << " rows < " << cols << " columns";
    throw numerical_error("insufficient_data", msg.str());
  }

  Mat gram(cols, cols);
  Vec moment(cols);
  gram.topLeftCorner(k, k) = features.transpose() * features;
  moment.head(k) = features.transpose() * targets;
  if (with_intercept) {
    const Vec col_sums = features.colwise().sum().transpose();
    gram.block(0, k, k, 1) = col_sums;
    gram.block(k, 0, 1, k) = col_sums.transpose();
    gram(k, k) = static_cast<double>(n);
    moment(k) = targets.sum();
  }
  gram = symmetrized(gram);

  Eigen::SelfAdjointEigenSolver<Mat> es(gram, Eigen::EigenvaluesOnly);
  const double lambda_min = es.eigenvalues().minCoeff();
  if (lambda_min <= 1e-12 * gram.trace() / static_cast<double>(cols)) {
    std::ostringstream msg;
    msg << "least_squares_solve: singular design, gram lambda_min = " << lambda_min;
    throw numerical_error("singular_design", msg.str());
  }

  Vec solution = gram.ldlt().solve(moment);
  LeastSquaresSolution out;
  out.coefficients = solution.head(k);
  if (with_intercept) out.intercept = solution(k);
  out.gram_lambda_min = lambda_min;
  return out;
}

namespace detail {

inline Mat unvec_col_major(const Vec& v, Index d) {
  return Eigen::Map<const Mat>(v.data(), d, d);
}

inline double gram_lambda_min(const Mat& features) {
  const Mat gram = symmetrized(features.transpose() * features);
  Eigen::SelfAdjointEigenSolver<Mat> es(gram, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double residual_mean(const Design& design, const Vec& coefficients,
                            std::optional<double> intercept) {
  Vec residuals = design.targets - design.features * coefficients;
  if (intercept) residuals.array() -= *intercept;
  return residuals.mean();
}

}  // namespace detail

// The covariance method. Two least-squares solves recover the stationary
// covariance and the cross moment, and the transition estimate comes from the
// linear solve a_hat * sigma_hat = m_hat (no explicit inverse).
//
// With sigma_eps_known supplied the symmetric regression subtracts the noise
// variance from its targets; otherwise the regression carries an intercept
// whose fitted value (clamped at zero) is reported as sigma_eps_sq_hat.
inline CMEstimate estimate_cm(const Trajectory& traj, std::optional<double> sigma_eps_known) {
  const Index d = traj.dim();
  const Index horizon = traj.horizon();
  const Index need = d * (d + 1) / 2 + d * d + 1;
  if (horizon < need) {
    std::ostringstream msg;
    msg << "estimate_cm: horizon " << horizon << " < " << need
        << " rows required for d = " << d;
    throw numerical_error("insufficient_data", msg.str());
  }

  const bool with_intercept = !sigma_eps_known.has_value();
  const Design sym = build_sym_design(traj, sigma_eps_known);
  const LeastSquaresSolution sym_fit =
      least_squares_solve(sym.features, sym.targets, with_intercept);
  const Design cross = build_cross_design(traj);
  const LeastSquaresSolution cross_fit =
      least_squares_solve(cross.features, cross.targets, /*with_intercept=*/false);

  CMEstimate est;
  est.sigma_hat = svec_inv(sym_fit.coefficients);
  est.m_hat = detail::unvec_col_major(cross_fit.coefficients, d);
  if (with_intercept) est.sigma_eps_sq_hat = std::max(0.0, *sym_fit.intercept);

  Eigen::SelfAdjointEigenSolver<Mat> sigma_eig(est.sigma_hat, Eigen::EigenvaluesOnly);
  const double lmin_sigma = sigma_eig.eigenvalues().minCoeff();
  const double floor = 1e-10 * est.sigma_hat.trace() / static_cast<double>(d);
  if (lmin_sigma <= floor) {
    std::ostringstream msg;
    msg << "estimate_cm: sigma_hat is near singular, lambda_min = " << lmin_sigma
        << " (floor " << floor << ")";
    throw numerical_error("near_singular_sigma_hat", msg.str());
  }
  // a_hat sigma_hat = m_hat  <=>  sigma_hat a_hat' = m_hat' (sigma_hat symmetric).
  est.a_hat = est.sigma_hat.partialPivLu().solve(est.m_hat.transpose()).transpose();

  est.diag.lambda_min_sym = detail::gram_lambda_min(sym.features);
  est.diag.lambda_min_cross = cross_fit.gram_lambda_min;
  est.diag.lambda_min_sigma_hat = lmin_sigma;
  const double lmax_abs = sigma_eig.eigenvalues().cwiseAbs().maxCoeff();
  const double lmin_abs = sigma_eig.eigenvalues().cwiseAbs().minCoeff();
  est.diag.condition_sigma_hat = lmax_abs / lmin_abs;
  est.diag.residual_mean_sym =
      detail::residual_mean(sym, sym_fit.coefficients, sym_fit.intercept);
  est.diag.residual_mean_cross =
      detail::residual_mean(cross, cross_fit.coefficients, std::nullopt);
  return est;
}

// Empirical autocorrelation of the symmetric-design residuals
// y_t^2 - x_t' sigma_hat x_t - sigma_eps^2 at lags 0..max_lag. Lag 0 is 1 by
// normalization.
inline Vec residual_autocorrelation(const Trajectory& traj, const CMEstimate& est,
                                    double sigma_eps, Index max_lag) {
  const Index horizon = traj.horizon();
  if (max_lag < 0 || max_lag >= horizon) {
    throw validation_error("domain", "residual_autocorrelation: max_lag must lie in [0, T)");
  }
  Vec resid(horizon);
  for (Index t = 0; t < horizon; ++t) {
    const Vec x = traj.xs.row(t).transpose();
    resid(t) = traj.ys(t) * traj.ys(t) - x.dot(est.sigma_hat * x) - sigma_eps * sigma_eps;
  }
  const double mean = resid.mean();
  resid.array() -= mean;
  Vec autocov(max_lag + 1);
  for (Index h = 0; h <= max_lag; ++h) {
    double c = 0.0;
    for (Index t = 0; t + h < horizon; ++t) c += resid(t) * resid(t + h);
    autocov(h) = c / static_cast<double>(horizon);
  }
  if (!(autocov(0) > 0.0)) {
    throw numerical_error("degenerate", "residual_autocorrelation: residuals have zero variance");
  }
  return autocov / autocov(0);
}

inline void to_json(nlohmann::json& j, const DesignDiagnostics& diag) {
  j = nlohmann::json{{"lambda_min_sym", diag.lambda_min_sym},
                     {"lambda_min_cross", diag.lambda_min_cross},
                     {"lambda_min_sigma_hat", diag.lambda_min_sigma_hat},
                     {"condition_sigma_hat", diag.condition_sigma_hat},
                     {"residual_mean_sym", diag.residual_mean_sym},
                     {"residual_mean_cross", diag.residual_mean_cross}};
}

inline void to_json(nlohmann::json& j, const CMEstimate& est) {
  j = nlohmann::json{{"sigma_hat", matrix_to_json(est.sigma_hat)},
                     {"m_hat", matrix_to_json(est.m_hat)},
                     {"a_hat", matrix_to_json(est.a_hat)},
                     {"diagnostics", est.diag}};
  j["sigma_eps_sq_hat"] =
      est.sigma_eps_sq_hat ? nlohmann::json(*est.sigma_eps_sq_hat) : nlohmann::json(nullptr);
}

}  // namespace dynreg
