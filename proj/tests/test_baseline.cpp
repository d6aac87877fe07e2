#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
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

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("full-state OLS on a noiseless geometric sequence") {
  Mat betas(3, 1);
  betas << 1.0, 0.5, 0.25;
  const Mat a = ols_full_state(betas);
  REQUIRE(a(0, 0) == Approx(0.5).margin(1e-15));
}

TEST_CASE("full-state OLS rejects an all-zero state sequence") {
  try {
    ols_full_state(Mat::Zero(10, 2));
    FAIL("expected a singular-design error");
  } catch (const numerical_error& e) {
    REQUIRE(e.tag() == "singular_design");
  }
  REQUIRE_THROWS_AS(ols_full_state(Mat::Ones(1, 2)), numerical_error);
}

TEST_CASE("full-state OLS matches the normal-equations oracle") {
  Mat a(2, 2);
  a << 0.5, 0.1, 0.0, 0.4;
  const auto params = make_params(2, a, 0.5 * Mat::Identity(2, 2), 0.5);
  const auto traj = simulate_trajectory(params, 500, 88, /*keep_states=*/true);
  const Mat& betas = *traj.betas;

  const Mat estimate = ols_full_state(betas);
  // Row t of the regression: beta_{t+1} ~ A beta_t, solved per output row.
  const Mat predictors = betas.topRows(499);
  for (Index row = 0; row < 2; ++row) {
    const Vec targets = betas.bottomRows(499).col(row);
    const Vec expected = oracle::normal_equations(predictors, targets);
    REQUIRE((estimate.row(row).transpose() - expected).norm() <= 1e-9);
  }
}

TEST_CASE("full-state OLS recovers noiseless dynamics exactly") {
  Mat a(2, 2);
  a << 0.7, 0.2, -0.1, 0.5;
  Mat betas(20, 2);
  Vec b(2);
  b << 1.0, -0.5;
  for (Index t = 0; t < 20; ++t) {
    betas.row(t) = b.transpose();
    b = a * b;
  }
  REQUIRE((ols_full_state(betas) - a).norm() <= 1e-10);
}

TEST_CASE("revealing the states beats the covariance method") {
  Mat a(2, 2);
  a << 0.5, 0.1, 0.0, 0.4;
  const auto params = make_params(2, a, 0.5 * Mat::Identity(2, 2), 0.5);
  const Index horizon = 1 << 14;
  std::vector<double> err_full, err_cm;
  for (int seed = 0; seed < 32; ++seed) {
    const auto traj = simulate_trajectory(params, horizon, 300 + seed, /*keep_states=*/true);
    err_full.push_back((ols_full_state(*traj.betas) - a).norm());
    err_cm.push_back((estimate_cm(traj, 0.5).a_hat - a).norm());
  }
  REQUIRE(median_of(err_full) <= median_of(err_cm));
}
