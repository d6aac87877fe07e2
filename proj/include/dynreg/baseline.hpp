#pragma once

#include <sstream>

#include "dynreg/errors.hpp"
#include "dynreg/linalg.hpp"

namespace dynreg {

// Fully-observed least squares: given the hidden states beta_0..beta_{T-1},
// returns (sum_t beta_{t+1} beta_t') (sum_t beta_t beta_t')^{-1} computed by a
// linear solve over t = 0..T-2.
inline Mat ols_full_state(const Mat& betas) {
  const Index horizon = betas.rows();
  const Index d = betas.cols();
  if (horizon < 2) {
    throw numerical_error("insufficient_data", "ols_full_state: need at least 2 states");
  }
  Mat gram = Mat::Zero(d, d);
  Mat cross = Mat::Zero(d, d);
  for (Index t = 0; t + 1 < horizon; ++t) {
    const Vec b = betas.row(t).transpose();
    gram.noalias() += b * b.transpose();
    cross.noalias() += betas.row(t + 1).transpose() * b.transpose();
  }
  gram = symmetrized(gram);
  const double lmin = min_eigenvalue(gram);
  if (lmin <= 1e-12 * std::max(1.0, gram.trace() / static_cast<double>(d))) {
    std::ostringstream msg;
    msg << "ols_full_state: singular state Gram, lambda_min = " << lmin;
    throw numerical_error("singular_design", msg.str());
  }
  // A gram = cross  <=>  gram A' = cross'.
  return gram.ldlt().solve(cross.transpose()).transpose();
}

}  // namespace dynreg
