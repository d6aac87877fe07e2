#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dynreg/dynreg.hpp"
#include "oracles.hpp"

using namespace dynreg;
using Catch::Approx;

namespace {

SystemParams make_params(Index d, const Mat& a, const Mat& w, double eps) {
  SystemParams p;
  p.dim = d;
  p.A = a;
  p.sigma_w = w;
  p.sigma_eps = eps;
  return p;
}

struct Instance {
  Trajectory traj;
  Mat a;
  Mat sigma_w;
  double sigma_eps;
  Vec init_mean;
  Mat init_cov;
};

Instance seeded_instance(std::uint64_t seed, Index d, Index horizon) {
  SplitMix64 rng(seed);
  Instance inst;
  inst.a = oracle::random_stable(rng, d, 0.3 + 0.5 * rng.uniform_open01());
  inst.sigma_w = oracle::random_psd(rng, d) + 0.2 * Mat::Identity(d, d);
  inst.sigma_eps = 0.3 + 0.7 * rng.uniform_open01();
  const auto params = make_params(d, inst.a, inst.sigma_w, inst.sigma_eps);
  inst.traj = simulate_trajectory(params, horizon, rng.next(), false);
  inst.init_mean = Vec::Zero(d);
  inst.init_cov = lyapunov_solve(inst.a, inst.sigma_w).sigma_inf;
  return inst;
}

}  // namespace

TEST_CASE("filter with uninformative observations propagates the prior") {
  const Index horizon = 6;
  Mat a(2, 2);
  a << 0.5, 0.1, 0.0, 0.4;
  const Mat sigma_w = 0.3 * Mat::Identity(2, 2);
  Trajectory traj;
  traj.xs = Mat::Zero(horizon, 2);
  traj.ys = Vec::Ones(horizon);
  Vec init_mean(2);
  init_mean << 1.0, -2.0;
  const Mat init_cov = Mat::Identity(2, 2);

  const auto filter = kalman_filter(traj, a, sigma_w, 0.7, init_mean, init_cov);

  Vec mean = init_mean;
  Mat cov = init_cov;
  double loglik = 0.0;
  for (Index t = 0; t < horizon; ++t) {
    REQUIRE((filter.filt_means.row(t).transpose() - mean).norm() <= 1e-14);
    REQUIRE((filter.filt_covs[t] - cov).norm() <= 1e-14);
    loglik += -0.5 * (std::log(2.0 * 3.14159265358979323846 * 0.49) + 1.0 / 0.49);
    mean = a * mean;
    cov = a * cov * a.transpose() + sigma_w;
  }
  REQUIRE(filter.loglik == Approx(loglik).epsilon(1e-12));
}

TEST_CASE("filter tracks the labels as observation noise vanishes") {
  const Index horizon = 40;
  const auto params = make_params(1, 0.6 * Mat::Identity(1, 1), Mat::Identity(1, 1), 0.0);
  auto traj = simulate_trajectory(params, horizon, 5, false);
  traj.xs = Mat::Ones(horizon, 1);
  for (Index t = 0; t < horizon; ++t) traj.ys(t) = std::sin(0.3 * static_cast<double>(t));

  const auto filter = kalman_filter(traj, params.A, params.sigma_w, 1e-8, Vec::Zero(1),
                                    Mat::Identity(1, 1));
  for (Index t = 0; t < horizon; ++t) {
    REQUIRE(std::abs(filter.filt_means(t, 0) - traj.ys(t)) <= 1e-4);
  }
}

TEST_CASE("filter matches dense joint-Gaussian conditioning") {
  const auto inst = seeded_instance(501, 2, 4);
  const auto filter = kalman_filter(inst.traj, inst.a, inst.sigma_w, inst.sigma_eps,
                                    inst.init_mean, inst.init_cov);
  const oracle::JointGaussian joint(inst.traj.xs, inst.a, inst.sigma_w, inst.sigma_eps,
                                    inst.init_mean, inst.init_cov);
  for (Index t = 0; t < 4; ++t) {
    REQUIRE((filter.pred_means.row(t).transpose() - joint.cond_mean(inst.traj.ys, t, t)).norm() <=
            1e-8);
    REQUIRE((filter.pred_covs[t] - joint.cond_cov(t, t)).norm() <= 1e-8);
    REQUIRE((filter.filt_means.row(t).transpose() -
             joint.cond_mean(inst.traj.ys, t, t + 1)).norm() <= 1e-8);
    REQUIRE((filter.filt_covs[t] - joint.cond_cov(t, t + 1)).norm() <= 1e-8);
  }
  REQUIRE(filter.loglik == Approx(joint.loglik(inst.traj.ys)).margin(1e-8));
}

TEST_CASE("filter conditioning never inflates covariances") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto inst = seeded_instance(seed, 3, 30);
    const auto filter = kalman_filter(inst.traj, inst.a, inst.sigma_w, inst.sigma_eps,
                                      inst.init_mean, inst.init_cov);
    const auto smoother = rts_smoother(filter, inst.a);
    for (Index t = 0; t < 30; ++t) {
      REQUIRE(min_eigenvalue(filter.pred_covs[t] - filter.filt_covs[t]) >= -1e-9);
      REQUIRE(min_eigenvalue(filter.filt_covs[t] - smoother.smooth_covs[t]) >= -1e-9);
      REQUIRE(min_eigenvalue(filter.filt_covs[t]) >= -1e-9);
    }
  }
}

TEST_CASE("filter rejects a zero innovation variance") {
  Trajectory traj;
  traj.xs = Mat::Ones(3, 1);
  traj.ys = Vec::Ones(3);
  REQUIRE_THROWS_AS(
      kalman_filter(traj, Mat::Zero(1, 1), Mat::Zero(1, 1), 0.0, Vec::Zero(1), Mat::Zero(1, 1)),
      numerical_error);
}

TEST_CASE("smoother boundary equals the last filter state") {
  const auto inst = seeded_instance(77, 2, 5);
  const auto filter = kalman_filter(inst.traj, inst.a, inst.sigma_w, inst.sigma_eps,
                                    inst.init_mean, inst.init_cov);
  const auto smoother = rts_smoother(filter, inst.a);
  REQUIRE(smoother.smooth_means.row(4) == filter.filt_means.row(4));
  REQUIRE(smoother.smooth_covs[4] == filter.filt_covs[4]);
}

TEST_CASE("smoothing without information returns the stationary prior") {
  const Index horizon = 5;
  Mat a(2, 2);
  a << 0.5, 0.1, 0.0, 0.4;
  const Mat sigma_w = 0.3 * Mat::Identity(2, 2);
  const Mat sigma_inf = lyapunov_solve(a, sigma_w).sigma_inf;
  Trajectory traj;
  traj.xs = Mat::Zero(horizon, 2);
  traj.ys = Vec::Zero(horizon);

  const auto filter = kalman_filter(traj, a, sigma_w, 1.0, Vec::Zero(2), sigma_inf);
  const auto smoother = rts_smoother(filter, a);
  for (Index t = 0; t < horizon; ++t) {
    REQUIRE(smoother.smooth_means.row(t).norm() <= 1e-13);
    REQUIRE((smoother.smooth_covs[t] - sigma_inf).norm() <= 1e-12);
  }
}

TEST_CASE("smoother matches dense joint-Gaussian conditioning") {
  const auto inst = seeded_instance(502, 2, 4);
  const auto filter = kalman_filter(inst.traj, inst.a, inst.sigma_w, inst.sigma_eps,
                                    inst.init_mean, inst.init_cov);
  const auto smoother = rts_smoother(filter, inst.a);
  const oracle::JointGaussian joint(inst.traj.xs, inst.a, inst.sigma_w, inst.sigma_eps,
                                    inst.init_mean, inst.init_cov);
  const Index horizon = 4;
  for (Index t = 0; t < horizon; ++t) {
    const Vec mean = joint.cond_mean(inst.traj.ys, t, horizon);
    REQUIRE((smoother.smooth_means.row(t).transpose() - mean).norm() <= 1e-8);
    REQUIRE((smoother.smooth_covs[t] - joint.cond_cov(t, horizon)).norm() <= 1e-8);
    REQUIRE((smoother.s_t[t] - (joint.cond_cov(t, horizon) + mean * mean.transpose())).norm() <=
            1e-8);
  }
  for (Index t = 0; t + 1 < horizon; ++t) {
    REQUIRE((smoother.lag_one_covs[t] - joint.cond_cross(t + 1, t, horizon)).norm() <= 1e-8);
  }
}

TEST_CASE("em_step reduces to the smoother quotient for T = 2, d = 1") {
  const auto inst = seeded_instance(601, 1, 2);
  const auto filter = kalman_filter(inst.traj, inst.a, inst.sigma_w, inst.sigma_eps,
                                    inst.init_mean, inst.init_cov);
  const auto smoother = rts_smoother(filter, inst.a);
  const auto [a_next, loglik] = em_step(inst.traj, inst.a, inst.sigma_w, inst.sigma_eps,
                                        inst.init_mean, inst.init_cov);
  REQUIRE(a_next(0, 0) ==
          Approx(smoother.s_t_tm1[0](0, 0) / smoother.s_t[0](0, 0)).epsilon(1e-13));
  REQUIRE(loglik == Approx(filter.loglik));
}

TEST_CASE("em_step degenerates without state signal") {
  // sigma_w = 0 with A = 0 gives sigma_inf = 0: no state variance anywhere.
  const auto params = make_params(1, Mat::Zero(1, 1), Mat::Zero(1, 1), 1.0);
  const auto traj = simulate_trajectory(params, 10, 3, false);
  try {
    em_step(traj, Mat::Zero(1, 1), Mat::Zero(1, 1), 1.0, Vec::Zero(1), Mat::Zero(1, 1));
    FAIL("expected a degenerate M-step error");
  } catch (const numerical_error& e) {
    REQUIRE(e.tag() == "degenerate_m_step");
  }
}

TEST_CASE("em_step matches the dense-oracle transcription") {
  const auto inst = seeded_instance(603, 2, 5);
  const auto [a_next, loglik] = em_step(inst.traj, inst.a, inst.sigma_w, inst.sigma_eps,
                                        inst.init_mean, inst.init_cov);
  const auto [a_expected, ll_expected] = oracle::em_step_dense(
      inst.traj, inst.a, inst.sigma_w, inst.sigma_eps, inst.init_mean, inst.init_cov);
  REQUIRE((a_next - a_expected).norm() <= 1e-9);
  REQUIRE(loglik == Approx(ll_expected).margin(1e-9));
}

TEST_CASE("em_fit with zero iterations returns the initialization") {
  const auto params = make_params(1, 0.6 * Mat::Identity(1, 1), Mat::Identity(1, 1), 0.5);
  const auto traj = simulate_trajectory(params, 50, 2, false);
  const Mat a0 = 0.3 * Mat::Identity(1, 1);
  const auto est = em_fit(traj, params.sigma_w, params.sigma_eps, a0, 0);
  REQUIRE(est.a_hat == a0);
  REQUIRE(est.init == a0);
  REQUIRE(est.loglik_trace.empty());
  REQUIRE(est.iterations == 0);
  REQUIRE_FALSE(est.converged);
}

TEST_CASE("em_fit recovers a scalar transition from a cold start") {
  const auto params = make_params(1, 0.6 * Mat::Identity(1, 1), 0.5 * Mat::Identity(1, 1), 0.5);
  std::vector<double> errors;
  int converged_runs = 0;
  for (int seed = 0; seed < 8; ++seed) {
    const auto traj = simulate_trajectory(params, 20000, 7000 + seed, false);
    const auto est = em_fit(traj, params.sigma_w, params.sigma_eps,
                            0.3 * Mat::Identity(1, 1), 200);
    errors.push_back(std::abs(est.a_hat(0, 0) - 0.6));
    if (est.converged) ++converged_runs;
  }
  std::sort(errors.begin(), errors.end());
  REQUIRE(0.5 * (errors[3] + errors[4]) <= 0.1);
  REQUIRE(converged_runs >= 5);
}

TEST_CASE("em_fit log-likelihood trace ascends") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Index d = 1 + static_cast<Index>(seed % 2);
    auto inst = seeded_instance(800 + seed, d, 120);
    // Cold-start away from the truth; tol = 0 forces the full 200 iterations.
    const auto est = em_fit(inst.traj, inst.sigma_w, inst.sigma_eps,
                            0.2 * Mat::Identity(d, d), 200, 0.0);
    REQUIRE(est.loglik_trace.size() == 200);
    for (std::size_t k = 1; k < est.loglik_trace.size(); ++k) {
      REQUIRE(est.loglik_trace[k] - est.loglik_trace[k - 1] >= -1e-8);
    }
  }
}

TEST_CASE("em_fit terminates in one step at a fixed point") {
  const auto params = make_params(1, 0.6 * Mat::Identity(1, 1), 0.5 * Mat::Identity(1, 1), 0.5);
  const auto traj = simulate_trajectory(params, 200, 17, false);

  // Polish an estimate to (near) exact fixed-point accuracy.
  Mat a = 0.5 * Mat::Identity(1, 1);
  for (int k = 0; k < 5000; ++k) {
    const Mat prior = em_filter_prior(a, params.sigma_w);
    const auto [a_next, loglik] = em_step(traj, a, params.sigma_w, params.sigma_eps,
                                          Vec::Zero(1), prior);
    const double step = (a_next - a).norm();
    a = a_next;
    if (step < 1e-12) break;
  }
  const auto est = em_fit(traj, params.sigma_w, params.sigma_eps, a);
  REQUIRE(est.converged);
  REQUIRE(est.iterations == 1);
}

TEST_CASE("em_fit validates the initialization shape") {
  const auto params = make_params(2, 0.5 * Mat::Identity(2, 2), Mat::Identity(2, 2), 0.5);
  const auto traj = simulate_trajectory(params, 30, 1, false);
  REQUIRE_THROWS_AS(em_fit(traj, params.sigma_w, params.sigma_eps, Mat::Zero(1, 1)),
                    validation_error);
}
