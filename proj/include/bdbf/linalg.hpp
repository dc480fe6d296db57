#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>

#include "bdbf/common.hpp"

namespace bdbf {

// Cholesky factorization of a symmetric positive-definite matrix with a
// jitter ladder: if the plain factorization fails or is too ill-conditioned,
// add lambda*I with lambda starting at 1e-12*tr(A)/M and escalating by 10x
// up to 1e-6*tr(A)/M before giving up.
class SpdSolver {
 public:
  explicit SpdSolver(const Eigen::MatrixXd& a,
                     ErrorCode failure_code = ErrorCode::kConditioning) {
    const Eigen::Index m = a.rows();
    if (m == 0 || a.cols() != m) {
      throw Error(ErrorCode::kDimension, "SpdSolver: matrix must be square");
    }
    if (!a.allFinite()) {
      throw Error(ErrorCode::kNumerical, "SpdSolver: non-finite matrix entry");
    }
    const double scale = a.trace() / static_cast<double>(m);
    if (try_factor(a)) return;
    double lambda = 1e-12 * scale;
    const double lambda_max = 1e-6 * scale;
    while (lambda > 0.0 && lambda <= lambda_max * (1.0 + 1e-9)) {
      jitter_ = lambda;
      if (try_factor(a + lambda * Eigen::MatrixXd::Identity(m, m))) return;
      lambda *= 10.0;
    }
    throw Error(failure_code, "SpdSolver: factorization failed after jitter ladder");
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return llt_.solve(b); }
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const { return llt_.solve(b); }

  Eigen::MatrixXd inverse() const {
    const Eigen::Index m = llt_.matrixL().rows();
    return llt_.solve(Eigen::MatrixXd::Identity(m, m));
  }

  // log|A| from the Cholesky factor.
  double log_det() const {
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

  // x' A^-1 x, always >= 0 for SPD A.
  double quad_inv(const Eigen::VectorXd& x) const { return x.dot(llt_.solve(x)); }

  double jitter() const { return jitter_; }

 private:
  bool try_factor(const Eigen::MatrixXd& a) {
    llt_.compute(a);
    if (llt_.info() != Eigen::Success) return false;
    // Reciprocal condition estimate; reject factorizations past 1e12.
    return llt_.rcond() > 1e-12;
  }

  Eigen::LLT<Eigen::MatrixXd> llt_;
  double jitter_ = 0.0;
};

// Max |a_ij - a_ji| relative to the largest entry magnitude.
inline double symmetry_error(const Eigen::MatrixXd& a) {
  const double denom = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.transpose()).cwiseAbs().maxCoeff() / denom;
}

}  // namespace bdbf
