#pragma once

#include <cmath>
#include <sstream>
#include <string>

#include "dynreg/errors.hpp"
#include "dynreg/linalg.hpp"

namespace dynreg {

// Ground-truth description of the latent-state regression model
//
//   beta_{t+1} = A beta_t + w_t,      w_t ~ N(0, sigma_w),
//   y_t        = x_t' beta_t + eps_t, eps_t ~ N(0, sigma_eps^2),
//
// with features x_t ~ N(0, I_d) drawn independently of everything else.
struct SystemParams {
  Index dim = 0;
  Mat A;
  Mat sigma_w;
  double sigma_eps = 0.0;
};

// Stationary second moment of the state process together with the spectral
// radius of the transition matrix it was derived from.
struct StationarySolution {
  Mat sigma_inf;
  double spectral_radius = 0.0;
};

// Finite-sample error bounds for the covariance method, evaluated at a
// concrete (T, delta, gamma). The underlying analysis leaves a universal
// constant unspecified; `c_convention` stands in for it, entering each bound
// once under the radical and linearly in `min_t`.
struct TheoryBound {
  double gamma = 0.0;
  double tau = 0.0;
  double c_convention = 1.0;
  double bound_sigma = 0.0;  // error bound for the stationary covariance
  double bound_cross = 0.0;  // error bound for the cross moment A * sigma_inf
  double bound_a = 0.0;      // error bound for the transition matrix
  double min_t = 0.0;        // sample-size threshold the guarantee assumes
};

inline double spectral_radius(const Mat& a) {
  if (!is_square(a)) {
    throw validation_error("dimension", "spectral_radius: matrix must be square");
  }
  Eigen::EigenSolver<Mat> es(a, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// Checks the SystemParams invariants and returns the (possibly symmetrized)
// parameters. Asymmetry of sigma_w below 1e-12 is repaired by averaging with
// the transpose; anything larger is rejected.
inline SystemParams validate_params(SystemParams params) {
  const Index d = params.dim;
  if (d <= 0) {
    throw validation_error("dimension", "validate_params: dim must be positive");
  }
  auto check_shape = [d](const Mat& m, const char* name) {
    if (m.rows() != d || m.cols() != d) {
      std::ostringstream msg;
      msg << "validate_params: " << name << " is " << m.rows() << "x" << m.cols()
          << ", expected " << d << "x" << d;
      throw validation_error("dimension", msg.str());
    }
  };
  check_shape(params.A, "A");
  check_shape(params.sigma_w, "sigma_w");

  const double asym = asymmetry(params.sigma_w);
  if (asym > 1e-12) {
    std::ostringstream msg;
    msg << "validate_params: sigma_w asymmetry " << asym << " exceeds 1e-12";
    throw validation_error("asymmetric", msg.str());
  }
  params.sigma_w = symmetrized(params.sigma_w);

  const double lmin = min_eigenvalue(params.sigma_w);
  if (lmin < -1e-10) {
    std::ostringstream msg;
    msg << "validate_params: sigma_w is not PSD, lambda_min = " << lmin;
    throw validation_error("not_psd", msg.str());
  }
  if (params.sigma_eps < 0.0) {
    std::ostringstream msg;
    msg << "validate_params: sigma_eps = " << params.sigma_eps << " is negative";
    throw validation_error("negative_noise", msg.str());
  }
  return params;
}

// Solves P = A P A' + sigma_w for the stationary covariance by writing the
// fixed point as the d^2 x d^2 linear system (I - A (x) A) vec(P) = vec(sigma_w)
// and symmetrizing the result. Requires a stable A.
inline StationarySolution lyapunov_solve(const Mat& a, const Mat& sigma_w) {
  if (!is_square(a) || a.rows() != sigma_w.rows() || !is_square(sigma_w)) {
    throw validation_error("dimension",
                           "lyapunov_solve: A and sigma_w must be square with equal size");
  }
  if (asymmetry(sigma_w) > 1e-12) {
    throw validation_error("asymmetric", "lyapunov_solve: sigma_w must be symmetric");
  }
  const double rho = spectral_radius(a);
  if (rho >= 1.0) {
    std::ostringstream msg;
    msg << "lyapunov_solve: spectral radius " << rho << " >= 1";
    throw numerical_error("instability", msg.str());
  }

  const Index d = a.rows();
  Mat lhs = Mat::Identity(d * d, d * d);
  // Column-major vec convention: vec(A P A') = (A (x) A) vec(P).
  for (Index bj = 0; bj < d; ++bj) {
    for (Index bi = 0; bi < d; ++bi) {
      lhs.block(bi * d, bj * d, d, d) -= a(bi, bj) * a;
    }
  }
  const Mat w = symmetrized(sigma_w);
  Vec rhs = Eigen::Map<const Vec>(w.data(), d * d);
  Vec p = lhs.partialPivLu().solve(rhs);
  Mat sigma_inf = symmetrized(Eigen::Map<const Mat>(p.data(), d, d));
  return {sigma_inf, rho};
}

// sup_{k >= 0} ||A^k|| gamma^{-k}, the transient-growth constant of a stable
// matrix relative to a decay rate gamma in (rho(A), 1).
//
// The running matrix is A^k gamma^{-k}, updated by one multiply with A/gamma
// per step, so no overflow-prone powers of gamma are formed. Iteration stops
// at the first k >= 1 whose term drops to 1 or below: by submultiplicativity
// every later term m = q k + r is bounded by term_k^q * term_r, hence by the
// running supremum.
inline double gelfand_tau(const Mat& a, double gamma) {
  if (!is_square(a)) {
    throw validation_error("dimension", "gelfand_tau: matrix must be square");
  }
  const double rho = spectral_radius(a);
  if (!(gamma > rho) || !(gamma < 1.0)) {
    std::ostringstream msg;
    msg << "gelfand_tau: gamma = " << gamma << " must lie in (rho(A), 1) = ("
        << rho << ", 1)";
    throw validation_error("domain", msg.str());
  }

  constexpr long kMaxPower = 100000;
  const Mat scaled = a / gamma;
  Mat running = scaled;
  double sup = 1.0;  // the k = 0 term is ||I|| = 1
  for (long k = 1; k <= kMaxPower; ++k) {
    const double term = operator_norm(running);
    if (term > sup) sup = term;
    if (term <= 1.0) return sup;
    running = running * scaled;
  }
  std::ostringstream msg;
  msg << "gelfand_tau: no term dropped below 1 within " << kMaxPower
      << " powers (gamma too close to rho(A))";
  throw numerical_error("non_convergence", msg.str());
}

// Evaluates the three finite-sample bounds and the sample-size threshold at
// the given horizon. All occurrences of the analysis' unspecified constant
// are represented by the single `c_convention` value.
inline TheoryBound theoretical_bound(const SystemParams& params,
                                     const StationarySolution& stat,
                                     long horizon, double delta, double gamma,
                                     double c_convention = 1.0) {
  if (horizon < 1) {
    throw validation_error("domain", "theoretical_bound: T must be >= 1");
  }
  if (!(delta > 0.0) || !(delta < 1.0)) {
    throw validation_error("domain", "theoretical_bound: delta must lie in (0, 1)");
  }
  if (!(c_convention > 0.0)) {
    throw validation_error("domain", "theoretical_bound: c_convention must be positive");
  }
  const double tau = gelfand_tau(params.A, gamma);

  const double lmin = min_eigenvalue(stat.sigma_inf);
  if (!(lmin > 0.0)) {
    std::ostringstream msg;
    msg << "theoretical_bound: stationary covariance is singular, lambda_min = " << lmin;
    throw numerical_error("degenerate", msg.str());
  }

  const double d = static_cast<double>(params.dim);
  const double t = static_cast<double>(horizon);
  const double c = c_convention;
  const double sig_norm = operator_norm(stat.sigma_inf);
  const double a_norm = operator_norm(params.A);
  const double eps4 = std::pow(params.sigma_eps, 4);
  const double log_term = std::log(2.0 * t / delta);
  const double geo = 1.0 - gamma * gamma;
  const double tau2 = tau * tau;
  const double tau3 = tau2 * tau;
  const double dim_log = d * d + log_term * log_term;
  const double dim_log4 = d * d + 4.0 * log_term * log_term;

  TheoryBound out;
  out.gamma = gamma;
  out.tau = tau;
  out.c_convention = c;
  out.bound_sigma =
      std::sqrt(c * d * d / (t * delta) * (eps4 + tau2 / geo * sig_norm * sig_norm * dim_log));
  out.bound_cross =
      std::sqrt(c * d * d / (t * delta) * (eps4 + tau3 / geo * sig_norm * sig_norm * dim_log));
  out.bound_a =
      (1.0 + a_norm) / lmin *
      std::sqrt(c * d * d / (t * delta) * (eps4 + tau3 / geo * sig_norm * sig_norm * dim_log4));
  out.min_t = c * d * d / (lmin * lmin * delta) *
              (eps4 + tau3 / geo * sig_norm * sig_norm * dim_log4);
  return out;
}

}  // namespace dynreg
