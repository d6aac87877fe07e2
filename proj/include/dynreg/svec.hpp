#pragma once

#include <cmath>
#include <string>

#include "dynreg/errors.hpp"
#include "dynreg/linalg.hpp"

namespace dynreg {

// Norm-preserving flattening of a symmetric d x d matrix into a vector of
// length d(d+1)/2: the upper triangle is walked row-major with the diagonal
// copied and the strict upper entries scaled by sqrt(2), which makes
// ||svec(M)||_2 = ||M||_F.
struct SvecVector {
  Vec data;
  Index dim = 0;
};

inline SvecVector svec(const Mat& m) {
  if (!is_square(m)) {
    throw validation_error("dimension", "svec: matrix must be square");
  }
  if (asymmetry(m) > 1e-12) {
    throw validation_error("asymmetric", "svec: matrix must be symmetric within 1e-12");
  }
  const Index d = m.rows();
  const double root2 = std::sqrt(2.0);
  Vec v(d * (d + 1) / 2);
  Index k = 0;
  for (Index i = 0; i < d; ++i) {
    for (Index j = i; j < d; ++j) {
      v(k++) = (i == j) ? m(i, i) : root2 * m(i, j);
    }
  }
  return {std::move(v), d};
}

// Side length d with d(d+1)/2 == n, or a dimension error.
inline Index svec_dim(Index n) {
  const Index d = static_cast<Index>((std::sqrt(8.0 * static_cast<double>(n) + 1.0) - 1.0) / 2.0 + 0.5);
  if (d < 1 || d * (d + 1) / 2 != n) {
    throw validation_error("dimension",
                           "svec_inv: length " + std::to_string(n) + " is not a triangular number");
  }
  return d;
}

inline Mat svec_inv(const Vec& v) {
  const Index d = svec_dim(v.size());
  const double inv_root2 = 1.0 / std::sqrt(2.0);
  Mat m(d, d);
  Index k = 0;
  for (Index i = 0; i < d; ++i) {
    for (Index j = i; j < d; ++j) {
      if (i == j) {
        m(i, i) = v(k);
      } else {
        m(i, j) = v(k) * inv_root2;
        m(j, i) = m(i, j);
      }
      ++k;
    }
  }
  return m;
}

inline Mat svec_inv(const SvecVector& v) {
  if (v.data.size() != v.dim * (v.dim + 1) / 2) {
    throw validation_error("dimension", "svec_inv: data length does not match dim");
  }
  return svec_inv(v.data);
}

}  // namespace dynreg
