#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "bdbf/calibration.hpp"
#include "bdbf/common.hpp"

namespace bdbf {

// Parallel per-pixel arrays for evaluation. Depth metrics read the depth
// columns; uncertainty metrics read the latent (log-depth) columns.
struct EvalSet {
  std::vector<double> pred_depth;
  std::vector<double> true_depth;
  std::vector<double> latent_mu;
  std::vector<double> latent_b;
  std::vector<bool> valid;

  std::size_t size() const { return pred_depth.size(); }

  void validate() const {
    const std::size_t n = pred_depth.size();
    if (true_depth.size() != n || latent_mu.size() != n || latent_b.size() != n ||
        valid.size() != n) {
      throw Error(ErrorCode::kDimension, "EvalSet: column length mismatch");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!valid[i]) continue;
      if (!(true_depth[i] > 0.0) || !std::isfinite(true_depth[i])) {
        throw Error(ErrorCode::kMeasurement, "EvalSet: non-positive true depth");
      }
      if (latent_b[i] < 0.0) {
        throw Error(ErrorCode::kScale, "EvalSet: negative Laplace scale");
      }
    }
  }
};

// Sampled curve: sparsification fraction -> error, or p -> |p - p_hat|.
struct CurveData {
  std::vector<double> abscissa;
  std::vector<double> ordinate;
};

struct DepthMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double delta1 = 0.0;  // percent of pixels with max(d/d_hat, d_hat/d) < 1.25
};

inline DepthMetrics depth_metrics(const EvalSet& set) {
  set.validate();
  double abs_sum = 0.0, sq_sum = 0.0;
  long n = 0, hits = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!set.valid[i]) continue;
    const double d_hat = set.pred_depth[i];
    const double d = set.true_depth[i];
    const double err = d_hat - d;
    abs_sum += std::abs(err);
    sq_sum += err * err;
    if (d_hat > 0.0 && std::max(d_hat / d, d / d_hat) < 1.25) ++hits;
    ++n;
  }
  if (n == 0) {
    throw Error(ErrorCode::kEmptySet, "depth_metrics: no valid pixels");
  }
  DepthMetrics out;
  out.mae = abs_sum / static_cast<double>(n);
  out.rmse = std::sqrt(sq_sum / static_cast<double>(n));
  out.delta1 = 100.0 * static_cast<double>(hits) / static_cast<double>(n);
  return out;
}

enum class BaseMetric { kMae, kRmse };
enum class ErrorSpace { kLatent, kDepth };

namespace detail {

// Mean absolute or root-mean-square error of the entries selected by order[0..count).
inline double subset_error(const std::vector<double>& abs_err,
                           const std::vector<std::size_t>& order, std::size_t count,
                           BaseMetric metric) {
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double e = abs_err[order[i]];
    sum += metric == BaseMetric::kMae ? e : e * e;
  }
  const double mean = sum / static_cast<double>(count);
  return metric == BaseMetric::kMae ? mean : std::sqrt(mean);
}

// Indices sorted by key descending; ties keep pixel order (stable sort).
inline std::vector<std::size_t> descending_order(const std::vector<double>& key) {
  std::vector<std::size_t> order(key.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  return order;
}

}  // namespace detail

struct AuseResult {
  double value = 0.0;
  CurveData curve;  // fraction removed -> method error minus oracle error
};

// Sparsification: repeatedly drop the most uncertain fraction of pixels and
// re-evaluate the base metric; the oracle drops by true error instead. AUSE
// is the trapezoidal area between the two curves over fractions in [0, 1).
inline AuseResult ause(const EvalSet& set, BaseMetric metric = BaseMetric::kMae,
                       double step = 0.01, ErrorSpace space = ErrorSpace::kLatent) {
  set.validate();
  if (!(step > 0.0) || step > 1.0) {
    throw Error(ErrorCode::kDomain, "ause: step must lie in (0, 1]");
  }
  std::vector<double> abs_err, unc;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!set.valid[i]) continue;
    if (space == ErrorSpace::kLatent) {
      abs_err.push_back(std::abs(set.latent_mu[i] - std::log(set.true_depth[i])));
    } else {
      abs_err.push_back(std::abs(set.pred_depth[i] - set.true_depth[i]));
    }
    unc.push_back(set.latent_b[i]);
  }
  const std::size_t n = abs_err.size();
  if (n < 2) {
    throw Error(ErrorCode::kEmptySet, "ause: needs at least two valid pixels");
  }

  const auto method_order = detail::descending_order(unc);
  const auto oracle_order = detail::descending_order(abs_err);

  AuseResult out;
  for (double f = 0.0; f < 1.0 - step / 2.0; f += step) {
    const auto n_remove = std::min(
        static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)), n - 1);
    const std::size_t kept = n - n_remove;
    // Retained set = everything after the n_remove most uncertain entries.
    double method = 0.0, oracle = 0.0;
    {
      std::vector<std::size_t> tail_m(method_order.begin() + n_remove, method_order.end());
      std::vector<std::size_t> tail_o(oracle_order.begin() + n_remove, oracle_order.end());
      method = detail::subset_error(abs_err, tail_m, kept, metric);
      oracle = detail::subset_error(abs_err, tail_o, kept, metric);
    }
    out.curve.abscissa.push_back(f);
    out.curve.ordinate.push_back(method - oracle);
  }
  double area = 0.0;
  for (std::size_t k = 1; k < out.curve.abscissa.size(); ++k) {
    area += 0.5 * (out.curve.ordinate[k] + out.curve.ordinate[k - 1]) *
            (out.curve.abscissa[k] - out.curve.abscissa[k - 1]);
  }
  out.value = area;
  return out;
}

// Inverse CDF of the unit Laplace distribution, upper half only.
inline double laplace_quantile(double q) {
  if (q < 0.5 || q >= 1.0) {
    throw Error(ErrorCode::kDomain, "laplace_quantile: q must lie in [0.5, 1)");
  }
  return -std::log(2.0 * (1.0 - q));
}

struct AuceResult {
  double value = 0.0;
  CurveData curve;  // p -> |p - p_hat|
};

// Calibration error over Laplace prediction intervals mu +- quantile((p+1)/2)*b
// on a uniform p-grid in (0,1) exclusive; AUCE is the grid mean of |p - p_hat|.
// Zero-scale pixels with nonzero error simply never fall inside any interval.
inline AuceResult auce(const EvalSet& set, int grid = 100) {
  set.validate();
  if (grid < 2) {
    throw Error(ErrorCode::kDomain, "auce: grid must be >= 2");
  }
  std::vector<double> abs_res, b;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!set.valid[i]) continue;
    abs_res.push_back(std::abs(std::log(set.true_depth[i]) - set.latent_mu[i]));
    b.push_back(set.latent_b[i]);
  }
  const std::size_t n = abs_res.size();
  if (n == 0) {
    throw Error(ErrorCode::kEmptySet, "auce: no valid pixels");
  }
  AuceResult out;
  double sum = 0.0;
  for (int j = 1; j <= grid; ++j) {
    const double p = static_cast<double>(j) / static_cast<double>(grid + 1);
    const double half_width = laplace_quantile((p + 1.0) / 2.0);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (abs_res[i] <= half_width * b[i]) ++covered;
    }
    const double p_hat = static_cast<double>(covered) / static_cast<double>(n);
    out.curve.abscissa.push_back(p);
    out.curve.ordinate.push_back(std::abs(p - p_hat));
    sum += std::abs(p - p_hat);
  }
  out.value = sum / static_cast<double>(grid);
  return out;
}

// Mean Laplace negative log-likelihood, |mu-z|/b + ln b + ln 2, on latent
// residuals. The ln 2 normalizer is kept so values form a proper scoring rule.
inline double nll(const EvalSet& set) {
  set.validate();
  double sum = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!set.valid[i]) continue;
    const double b = set.latent_b[i];
    if (!(b > 0.0)) {
      throw Error(ErrorCode::kScale, "nll: Laplace scale must be positive");
    }
    const double z = std::log(set.true_depth[i]);
    sum += std::abs(set.latent_mu[i] - z) / b + std::log(b) + std::log(2.0);
    ++n;
  }
  if (n == 0) {
    throw Error(ErrorCode::kEmptySet, "nll: no valid pixels");
  }
  return sum / static_cast<double>(n);
}

// Snapshot-ensemble combination: mean of member means, population variance
// of the means.
inline std::pair<double, double> ensemble_mean_var(std::span<const double> means) {
  if (means.empty()) {
    throw Error(ErrorCode::kEmptySet, "ensemble_mean_var: empty ensemble");
  }
  const double k = static_cast<double>(means.size());
  double mu = 0.0;
  for (double v : means) mu += v;
  mu /= k;
  double var = 0.0;
  for (double v : means) var += (v - mu) * (v - mu);
  return {mu, var / k};
}

// Predictive-ensemble combination: member variances add to the spread of the
// member means.
inline std::pair<double, double> ensemble_predictive(std::span<const double> means,
                                                     std::span<const double> vars) {
  if (means.size() != vars.size()) {
    throw Error(ErrorCode::kDimension, "ensemble_predictive: length mismatch");
  }
  auto [mu, var] = ensemble_mean_var(means);
  const double k = static_cast<double>(means.size());
  for (double v : vars) var += v / k;
  return {mu, var};
}

}  // namespace bdbf
