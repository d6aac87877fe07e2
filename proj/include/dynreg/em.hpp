#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "dynreg/errors.hpp"
#include "dynreg/io.hpp"
#include "dynreg/linalg.hpp"
#include "dynreg/model.hpp"
#include "dynreg/simulate.hpp"

namespace dynreg {

// Forward (Kalman) pass over a trajectory with scalar observations
// y_t = x_t' beta_t + eps_t. Row t of the mean matrices is the conditional
// mean of beta_t given observations up to t-1 (pred) or t (filt).
struct FilterResult {
  Mat pred_means;
  Mat filt_means;
  std::vector<Mat> pred_covs;
  std::vector<Mat> filt_covs;
  double loglik = 0.0;  // exact Gaussian log-likelihood of y_{0:T-1}
};

// Backward (RTS) pass. s_t[t] = E[beta_t beta_t' | all data]; s_t_tm1[i] is
// E[beta_{i+1} beta_i' | all data] for i = 0..T-2.
struct SmootherResult {
  Mat smooth_means;
  std::vector<Mat> smooth_covs;
  std::vector<Mat> lag_one_covs;  // Cov(beta_{t+1}, beta_t | all data)
  std::vector<Mat> s_t;
  std::vector<Mat> s_t_tm1;
};

struct EMEstimate {
  Mat a_hat;
  std::vector<double> loglik_trace;  // filter log-likelihood of each iterate
  int iterations = 0;
  bool converged = false;
  Mat init;  // the transition matrix used at iteration 0
};

// Standard forward recursion specialized to scalar observations: the
// innovation variance s_t = x_t' P x_t + sigma_eps^2 is a scalar, so the gain
// is P x_t / s_t and the covariance update is a symmetric rank-1 downdate.
// Covariances are re-symmetrized every step to control drift.
inline FilterResult kalman_filter(const Trajectory& traj, const Mat& a, const Mat& sigma_w,
                                  double sigma_eps, const Vec& init_mean, const Mat& init_cov) {
  const Index d = traj.dim();
  const Index horizon = traj.horizon();
  if (!is_square(a) || a.rows() != d || sigma_w.rows() != d || !is_square(sigma_w) ||
      init_mean.size() != d || init_cov.rows() != d || !is_square(init_cov)) {
    throw validation_error("dimension", "kalman_filter: dimension mismatch");
  }

  FilterResult res;
  res.pred_means.resize(horizon, d);
  res.filt_means.resize(horizon, d);
  res.pred_covs.resize(horizon);
  res.filt_covs.resize(horizon);

  Vec mean = init_mean;
  Mat cov = symmetrized(init_cov);
  const double eps_var = sigma_eps * sigma_eps;
  constexpr double kLog2Pi = 1.8378770664093454836;

  for (Index t = 0; t < horizon; ++t) {
    if (t > 0) {
      mean = a * mean;
      cov = symmetrized(a * cov * a.transpose() + sigma_w);
    }
    res.pred_means.row(t) = mean.transpose();
    res.pred_covs[t] = cov;

    const Vec x = traj.xs.row(t).transpose();
    const Vec cov_x = cov * x;
    const double innov_var = x.dot(cov_x) + eps_var;
    if (!(innov_var > 0.0) || !std::isfinite(innov_var)) {
      std::ostringstream msg;
      msg << "kalman_filter: innovation variance " << innov_var << " at step " << t;
      throw numerical_error("degenerate_innovation", msg.str());
    }
    const double innov = traj.ys(t) - x.dot(mean);
    mean += cov_x * (innov / innov_var);
    cov = symmetrized(cov - (cov_x * cov_x.transpose()) / innov_var);
    res.loglik -= 0.5 * (kLog2Pi + std::log(innov_var) + innov * innov / innov_var);

    res.filt_means.row(t) = mean.transpose();
    res.filt_covs[t] = cov;
  }
  return res;
}

// RTS smoother with lag-one covariances. The smoother gain solves against the
// predicted covariance; an exactly-zero predicted covariance with a matching
// zero cross term degenerates to a zero gain (the state is deterministic
// there), while an inconsistent singular prediction is an error.
inline SmootherResult rts_smoother(const FilterResult& filter, const Mat& a) {
  const Index horizon = filter.pred_means.rows();
  const Index d = filter.pred_means.cols();
  if (!is_square(a) || a.rows() != d) {
    throw validation_error("dimension", "rts_smoother: dimension mismatch");
  }
  if (horizon < 1) {
    throw validation_error("domain", "rts_smoother: empty filter result");
  }

  SmootherResult res;
  res.smooth_means.resize(horizon, d);
  res.smooth_covs.resize(horizon);
  res.lag_one_covs.resize(horizon - 1);
  res.s_t.resize(horizon);
  res.s_t_tm1.resize(horizon - 1);

  res.smooth_means.row(horizon - 1) = filter.filt_means.row(horizon - 1);
  res.smooth_covs[horizon - 1] = filter.filt_covs[horizon - 1];

  for (Index t = horizon - 2; t >= 0; --t) {
    const Mat& pred_cov = filter.pred_covs[t + 1];
    const Mat cross = a * filter.filt_covs[t];  // (d x d), gain = (pred^{-1} cross)'
    Mat gain;
    if (min_eigenvalue(pred_cov) <= 1e-14 * max_abs(pred_cov)) {
      if (max_abs(cross) <= 1e-14 * std::max(1.0, max_abs(filter.filt_covs[t]))) {
        gain = Mat::Zero(d, d);
      } else {
        std::ostringstream msg;
        msg << "rts_smoother: singular predicted covariance at step " << t + 1;
        throw numerical_error("degenerate_prediction", msg.str());
      }
    } else {
      gain = pred_cov.ldlt().solve(cross).transpose();
    }

    const Vec mean_diff = (res.smooth_means.row(t + 1) - filter.pred_means.row(t + 1)).transpose();
    res.smooth_means.row(t) =
        filter.filt_means.row(t) + (gain * mean_diff).transpose();
    res.smooth_covs[t] = symmetrized(
        filter.filt_covs[t] + gain * (res.smooth_covs[t + 1] - pred_cov) * gain.transpose());
    res.lag_one_covs[t] = res.smooth_covs[t + 1] * gain.transpose();
  }

  for (Index t = 0; t < horizon; ++t) {
    const Vec m = res.smooth_means.row(t).transpose();
    res.s_t[t] = res.smooth_covs[t] + m * m.transpose();
  }
  for (Index t = 0; t + 1 < horizon; ++t) {
    const Vec m1 = res.smooth_means.row(t + 1).transpose();
    const Vec m0 = res.smooth_means.row(t).transpose();
    res.s_t_tm1[t] = res.lag_one_covs[t] + m1 * m0.transpose();
  }
  return res;
}

// One EM iteration: E-step moments under a_current, then the quotient update
// A <- (sum_t S_{t,t-1}) (sum_t S_{t-1})^{-1} computed by a linear solve.
// Returns the updated matrix and the filter log-likelihood of a_current.
inline std::pair<Mat, double> em_step(const Trajectory& traj, const Mat& a_current,
                                      const Mat& sigma_w, double sigma_eps,
                                      const Vec& init_mean, const Mat& init_cov) {
  const FilterResult filter =
      kalman_filter(traj, a_current, sigma_w, sigma_eps, init_mean, init_cov);
  const SmootherResult smoother = rts_smoother(filter, a_current);

  const Index d = traj.dim();
  const Index horizon = traj.horizon();
  Mat sum_state = Mat::Zero(d, d);
  Mat sum_cross = Mat::Zero(d, d);
  for (Index t = 0; t + 1 < horizon; ++t) {
    sum_state += smoother.s_t[t];
    sum_cross += smoother.s_t_tm1[t];
  }
  sum_state = symmetrized(sum_state);
  const double lmin = min_eigenvalue(sum_state);
  if (lmin <= 1e-12 * std::max(1.0, sum_state.trace() / static_cast<double>(d))) {
    std::ostringstream msg;
    msg << "em_step: singular state-moment sum, lambda_min = " << lmin;
    throw numerical_error("degenerate_m_step", msg.str());
  }
  // A sum_state = sum_cross  <=>  sum_state A' = sum_cross'.
  Mat a_next = sum_state.ldlt().solve(sum_cross.transpose()).transpose();
  return {std::move(a_next), filter.loglik};
}

// Filter prior used for an EM iterate: the stationary covariance of the
// current guess when it is stable, and a wide diagonal fallback otherwise.
inline Mat em_filter_prior(const Mat& a, const Mat& sigma_w) {
  if (spectral_radius(a) < 1.0) {
    return lyapunov_solve(a, sigma_w).sigma_inf;
  }
  const Index d = a.rows();
  return 10.0 * sigma_w.trace() * Mat::Identity(d, d);
}

// Iterates em_step from a_init until the Frobenius change drops below `tol`
// or `max_iters` is reached. sigma_w and sigma_eps are supplied, not
// estimated.
//
// The filter prior (0, stationary covariance of a_init) is computed once and
// held fixed across iterations, so every update is an exact EM step for one
// fixed probability model and the log-likelihood trace is monotone.
// Recomputing the prior from each iterate breaks monotonicity: the prior
// swap perturbs the likelihood by O(||A_{k+1} - A_k||), which dominates the
// O(||A_{k+1} - A_k||^2) EM gain near convergence.
inline EMEstimate em_fit(const Trajectory& traj, const Mat& sigma_w, double sigma_eps,
                         const Mat& a_init, int max_iters = 500, double tol = 1e-6) {
  if (max_iters < 0) {
    throw validation_error("domain", "em_fit: max_iters must be >= 0");
  }
  const Index d = traj.dim();
  if (!is_square(a_init) || a_init.rows() != d) {
    throw validation_error("dimension", "em_fit: a_init must be d x d");
  }

  EMEstimate est;
  est.init = a_init;
  est.a_hat = a_init;
  const Vec zero_mean = Vec::Zero(d);
  const Mat prior = max_iters > 0 ? em_filter_prior(a_init, sigma_w) : Mat();

  Mat a = a_init;
  for (int k = 0; k < max_iters; ++k) {
    auto [a_next, loglik] = em_step(traj, a, sigma_w, sigma_eps, zero_mean, prior);
    est.loglik_trace.push_back(loglik);
    est.iterations = k + 1;
    const double step = (a_next - a).norm();
    a = a_next;
    if (step < tol) {
      est.converged = true;
      break;
    }
  }
  est.a_hat = a;
  return est;
}

inline void to_json(nlohmann::json& j, const EMEstimate& est) {
  j = nlohmann::json{{"a_hat", matrix_to_json(est.a_hat)},
                     {"loglik_trace", est.loglik_trace},
                     {"iterations", est.iterations},
                     {"converged", est.converged},
                     {"init", matrix_to_json(est.init)}};
}

}  // namespace dynreg
