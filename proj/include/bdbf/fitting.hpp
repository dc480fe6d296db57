#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "bdbf/basis.hpp"
#include "bdbf/common.hpp"
#include "bdbf/linalg.hpp"

namespace bdbf {

// Shared Gaussian prior over last-layer weights, p(w) = N(m0, alpha^-1 * S0).
// The stored covariance is the unscaled S0; callers supply alpha separately.
struct GaussianPrior {
  Eigen::VectorXd mean;  // m0
  Eigen::MatrixXd cov;   // S0, symmetric positive-definite

  Eigen::Index num_bases() const { return mean.size(); }
};

inline void validate_prior(const GaussianPrior& prior) {
  const Eigen::Index m = prior.mean.size();
  if (m < 1 || prior.cov.rows() != m || prior.cov.cols() != m) {
    throw Error(ErrorCode::kDimension, "GaussianPrior: mean/cov shape mismatch");
  }
  if (!prior.mean.allFinite() || !prior.cov.allFinite()) {
    throw Error(ErrorCode::kNumerical, "GaussianPrior: non-finite entry");
  }
  if (symmetry_error(prior.cov) > 1e-10) {
    throw Error(ErrorCode::kPriorInvalid, "GaussianPrior: covariance not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(prior.cov);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kPriorInvalid, "GaussianPrior: covariance not positive-definite");
  }
}

// Maximum-likelihood fit for the over-determined regime (N >= M).
struct MlFit {
  Eigen::VectorXd w_ml;
  double beta_ml = 0.0;  // noise precision, 1/beta = ||z - Phi w||^2 / N
  Eigen::Index n_obs = 0;
};

// Posterior state from which every prediction derives.
struct PosteriorFit {
  Eigen::VectorXd mean;  // m
  Eigen::MatrixXd cov;   // Sigma, SPD
  double alpha = 0.0;    // prior precision scale
  double beta = 0.0;     // noise precision
  Eigen::Index n_obs = 0;
  Eigen::Index n_bases = 0;
  int em_iters = 0;
  bool converged = false;
};

inline MlFit fit_ml(const RegressionSystem& sys) {
  const Eigen::Index n = sys.n_obs();
  const Eigen::Index m = sys.n_bases();
  if (n < m) {
    throw Error(ErrorCode::kUnderdetermined,
                "fit_ml: N < M, use the Bayesian fit instead");
  }
  const Eigen::MatrixXd gram = sys.design.transpose() * sys.design;
  SpdSolver solver(gram, ErrorCode::kRank);
  MlFit fit;
  fit.w_ml = solver.solve(Eigen::VectorXd(sys.design.transpose() * sys.targets));
  const double rss = (sys.targets - sys.design * fit.w_ml).squaredNorm();
  fit.beta_ml = std::min(static_cast<double>(n) / std::max(rss, 0.0), kMaxPrecision);
  if (!std::isfinite(fit.beta_ml)) fit.beta_ml = kMaxPrecision;
  fit.n_obs = n;
  return fit;
}

// Conjugate posterior: Sigma = (alpha S0^-1 + beta Phi'Phi)^-1,
// m = Sigma (alpha S0^-1 m0 + beta Phi'z). An empty system returns the prior
// unchanged (scaled by alpha).
inline PosteriorFit fit_bayes(const RegressionSystem& sys, const GaussianPrior& prior,
                              double alpha, double beta) {
  validate_prior(prior);
  if (!(alpha > 0.0) || !(beta > 0.0) || !std::isfinite(alpha) || !std::isfinite(beta)) {
    throw Error(ErrorCode::kDomain, "fit_bayes: alpha and beta must be positive");
  }
  const Eigen::Index m = prior.num_bases();
  PosteriorFit fit;
  fit.alpha = alpha;
  fit.beta = beta;
  fit.n_obs = sys.n_obs();
  fit.n_bases = m;
  if (sys.n_obs() == 0) {
    fit.mean = prior.mean;
    fit.cov = prior.cov / alpha;
    return fit;
  }
  if (sys.n_bases() != m) {
    throw Error(ErrorCode::kDimension, "fit_bayes: system and prior dimensions differ");
  }
  SpdSolver prior_solver(prior.cov);
  const Eigen::MatrixXd precision =
      alpha * prior_solver.inverse() + beta * (sys.design.transpose() * sys.design);
  SpdSolver posterior_solver(0.5 * (precision + precision.transpose()));
  const Eigen::VectorXd rhs = alpha * prior_solver.solve(prior.mean) +
                              beta * (sys.design.transpose() * sys.targets);
  fit.mean = posterior_solver.solve(rhs);
  Eigen::MatrixXd cov = posterior_solver.inverse();
  fit.cov = 0.5 * (cov + cov.transpose());
  if (!fit.mean.allFinite() || !fit.cov.allFinite()) {
    throw Error(ErrorCode::kNumerical, "fit_bayes: non-finite posterior");
  }
  return fit;
}

// Latent predictive distribution N(m'phi, phi'Sigma phi). The observation
// noise term beta^-1 is off by default; include_noise enables the textbook
// variant.
inline std::pair<double, double> predict(const PosteriorFit& fit,
                                         const Eigen::VectorXd& phi,
                                         bool include_noise = false) {
  if (phi.size() != fit.mean.size()) {
    throw Error(ErrorCode::kDimension, "predict: basis vector dimension mismatch");
  }
  const double mu = fit.mean.dot(phi);
  double var = std::max(0.0, phi.dot(fit.cov * phi));
  if (include_noise) var += 1.0 / fit.beta;
  return {mu, var};
}

// Training-path predictive: mu = w_ml'phi, var = beta_ml^-1 phi'(Phi'Phi)^-1 phi.
inline std::pair<double, double> predict_ml(const MlFit& ml, const RegressionSystem& sys,
                                            const Eigen::VectorXd& phi) {
  if (phi.size() != ml.w_ml.size() || sys.n_bases() != ml.w_ml.size()) {
    throw Error(ErrorCode::kDimension, "predict_ml: dimension mismatch");
  }
  SpdSolver solver(Eigen::MatrixXd(sys.design.transpose() * sys.design), ErrorCode::kRank);
  const double mu = ml.w_ml.dot(phi);
  const double var = std::max(0.0, solver.quad_inv(phi) / ml.beta_ml);
  return {mu, var};
}

// Prior-only prediction for the zero-measurement case:
// mu = m0'phi, var = phi'S0 phi (alpha fixed at 1).
inline std::pair<double, double> predict_prior(const GaussianPrior& prior,
                                               const Eigen::VectorXd& phi) {
  validate_prior(prior);
  if (phi.size() != prior.mean.size()) {
    throw Error(ErrorCode::kDimension, "predict_prior: basis vector dimension mismatch");
  }
  const double mu = prior.mean.dot(phi);
  const double var = std::max(0.0, phi.dot(prior.cov * phi));
  return {mu, var};
}

struct EmOptions {
  double alpha0 = 1.0;
  double beta0 = 0.0;  // <= 0 selects the sqrt(N) default
  int max_iters = 8;
  double tol = 0.01;  // relative change in beta
};

// Hyperparameter trajectory, starting at the initial (alpha0, beta0) and
// followed by one entry per M-step.
struct EmTrace {
  std::vector<double> alphas;
  std::vector<double> betas;
};

// Evidence-framework inference: alternate the conjugate posterior (E) with
// closed-form re-estimation of alpha and beta (M) until the relative change
// in beta drops below tol. The returned fit is recomputed with the final
// hyperparameters so its precision identity holds exactly.
inline PosteriorFit fit_em(const RegressionSystem& sys, const GaussianPrior& prior,
                           const EmOptions& opts = {}, EmTrace* trace = nullptr) {
  validate_prior(prior);
  const Eigen::Index n = sys.n_obs();
  const Eigen::Index m = prior.num_bases();
  if (n < 1) {
    throw Error(ErrorCode::kEmptySet, "fit_em: needs at least one measurement");
  }
  if (sys.n_bases() != m) {
    throw Error(ErrorCode::kDimension, "fit_em: system and prior dimensions differ");
  }

  SpdSolver prior_solver(prior.cov);
  const Eigen::MatrixXd gram = sys.design.transpose() * sys.design;

  double alpha = opts.alpha0;
  double beta = opts.beta0 > 0.0 ? opts.beta0 : std::sqrt(static_cast<double>(n));
  if (trace) {
    trace->alphas = {alpha};
    trace->betas = {beta};
  }

  int iters = 0;
  bool converged = false;
  while (iters < opts.max_iters) {
    const PosteriorFit fit = fit_bayes(sys, prior, alpha, beta);
    const Eigen::VectorXd dm = fit.mean - prior.mean;
    const double alpha_inv =
        (prior_solver.quad_inv(dm) + prior_solver.solve(fit.cov).trace()) /
        static_cast<double>(m);
    const double beta_inv = ((sys.targets - sys.design * fit.mean).squaredNorm() +
                             gram.cwiseProduct(fit.cov).sum()) /
                            static_cast<double>(n);
    if (!std::isfinite(alpha_inv) || !std::isfinite(beta_inv)) {
      throw Error(ErrorCode::kNumerical, "fit_em: non-finite re-estimate");
    }
    const double alpha_new = std::min(1.0 / std::max(alpha_inv, 0.0), kMaxPrecision);
    const double beta_new = std::min(1.0 / std::max(beta_inv, 0.0), kMaxPrecision);
    const double rel_change = std::abs(beta_new - beta) / beta;
    alpha = alpha_new;
    beta = beta_new;
    ++iters;
    if (trace) {
      trace->alphas.push_back(alpha);
      trace->betas.push_back(beta);
    }
    if (rel_change < opts.tol) {
      converged = true;
      break;
    }
  }

  PosteriorFit fit = fit_bayes(sys, prior, alpha, beta);
  fit.em_iters = iters;
  fit.converged = converged;
  return fit;
}

// Log marginal likelihood ln p(z | alpha, beta) with the weights integrated
// out. The -ln|S0| term uses the unscaled prior covariance; the alpha scale
// is carried entirely by the M ln(alpha) term.
inline double log_evidence(const RegressionSystem& sys, const GaussianPrior& prior,
                           double alpha, double beta) {
  const Eigen::Index n = sys.n_obs();
  if (n == 0) return 0.0;
  const Eigen::Index m = prior.num_bases();
  const PosteriorFit fit = fit_bayes(sys, prior, alpha, beta);
  SpdSolver prior_solver(prior.cov);
  SpdSolver cov_solver(fit.cov);
  const Eigen::VectorXd dm = fit.mean - prior.mean;
  const double e_m = beta * (sys.targets - sys.design * fit.mean).squaredNorm() +
                     alpha * prior_solver.quad_inv(dm);
  return 0.5 * (static_cast<double>(n) * std::log(beta) +
                static_cast<double>(m) * std::log(alpha) -
                static_cast<double>(n) * std::log(2.0 * std::numbers::pi) - e_m +
                cov_solver.log_det() - prior_solver.log_det());
}

}  // namespace bdbf
