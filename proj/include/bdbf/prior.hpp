#pragma once

#include <Eigen/Core>
#include <cmath>

#include "bdbf/common.hpp"
#include "bdbf/fitting.hpp"

namespace bdbf {

// Running sums over per-image ML weight solutions collected across a training
// epoch. Kept in sum / outer-product form so partial accumulators merge.
class PriorAccumulator {
 public:
  explicit PriorAccumulator(Eigen::Index num_bases)
      : sum_(Eigen::VectorXd::Zero(num_bases)),
        sum_outer_(Eigen::MatrixXd::Zero(num_bases, num_bases)) {
    if (num_bases < 1) {
      throw Error(ErrorCode::kDimension, "PriorAccumulator: num_bases must be >= 1");
    }
  }

  void accumulate(const Eigen::VectorXd& w) {
    if (w.size() != sum_.size()) {
      throw Error(ErrorCode::kDimension, "PriorAccumulator: weight dimension mismatch");
    }
    if (!w.allFinite()) {
      throw Error(ErrorCode::kNumerical, "PriorAccumulator: non-finite weight sample");
    }
    sum_ += w;
    sum_outer_ += w * w.transpose();
    ++count_;
  }

  void merge(const PriorAccumulator& other) {
    if (other.sum_.size() != sum_.size()) {
      throw Error(ErrorCode::kDimension, "PriorAccumulator: merge dimension mismatch");
    }
    sum_ += other.sum_;
    sum_outer_ += other.sum_outer_;
    count_ += other.count_;
  }

  long count() const { return count_; }
  const Eigen::VectorXd& sum() const { return sum_; }
  const Eigen::MatrixXd& sum_outer() const { return sum_outer_; }
  Eigen::Index num_bases() const { return sum_.size(); }

 private:
  long count_ = 0;
  Eigen::VectorXd sum_;
  Eigen::MatrixXd sum_outer_;
};

inline PriorAccumulator merge(const PriorAccumulator& a, const PriorAccumulator& b) {
  PriorAccumulator out = a;
  out.merge(b);
  return out;
}

// Sample mean and unbiased covariance of the accumulated weights, with a
// shrinkage term 1e-6 * tr/M * I that keeps the result positive-definite.
// A degenerate spread (all samples identical) falls back to a 1e-12 floor.
inline GaussianPrior finalize(const PriorAccumulator& acc) {
  const long n = acc.count();
  if (n < 2) {
    throw Error(ErrorCode::kInsufficientSamples,
                "finalize: needs at least two weight samples");
  }
  const auto m = static_cast<double>(acc.num_bases());
  GaussianPrior prior;
  prior.mean = acc.sum() / static_cast<double>(n);
  Eigen::MatrixXd cov =
      (acc.sum_outer() - static_cast<double>(n) * prior.mean * prior.mean.transpose()) /
      static_cast<double>(n - 1);
  cov = 0.5 * (cov + cov.transpose());
  double lambda = 1e-6 * cov.trace() / m;
  if (!(lambda > 0.0) || !std::isfinite(lambda)) lambda = 1e-12;
  cov += lambda * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
  prior.cov = cov;
  validate_prior(prior);
  return prior;
}

}  // namespace bdbf
