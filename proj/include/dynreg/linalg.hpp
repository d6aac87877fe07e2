#pragma once

#include <Eigen/Dense>

#include "dynreg/errors.hpp"

namespace dynreg {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

inline bool is_square(const Mat& m) { return m.rows() == m.cols(); }

inline Mat symmetrized(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline double max_abs(const Mat& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

// Largest absolute deviation from symmetry, max over entries of |M - M^T|.
inline double asymmetry(const Mat& m) { return max_abs(m - m.transpose()); }

// Smallest eigenvalue of a symmetric matrix.
inline double min_eigenvalue(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Operator (spectral) norm: the largest singular value.
inline double operator_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  return m.jacobiSvd().singularValues()(0);
}

}  // namespace dynreg
