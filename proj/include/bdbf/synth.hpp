#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bdbf/basis.hpp"
#include "bdbf/common.hpp"
#include "bdbf/fitting.hpp"
#include "bdbf/rng.hpp"

namespace bdbf {

// Measurement budget: either a fraction of the image or an absolute count.
struct Sparsity {
  static Sparsity fraction(double f) {
    if (!(f >= 0.0) || f > 1.0) {
      throw Error(ErrorCode::kDomain, "Sparsity: fraction must lie in [0, 1]");
    }
    Sparsity s;
    s.is_fraction_ = true;
    s.fraction_ = f;
    return s;
  }

  static Sparsity count(long n) {
    if (n < 0) {
      throw Error(ErrorCode::kDomain, "Sparsity: count must be >= 0");
    }
    Sparsity s;
    s.count_ = n;
    return s;
  }

  long resolve(long total_pixels) const {
    if (is_fraction_) return std::lround(fraction_ * static_cast<double>(total_pixels));
    return count_;
  }

 private:
  bool is_fraction_ = false;
  double fraction_ = 0.0;
  long count_ = 0;
};

enum class NoiseFamily { kGaussian, kLaplace };

struct SynthConfig {
  int height = 64;
  int width = 64;
  int num_bases = 8;
  bool bias = true;
  std::uint64_t seed = 0;
  double beta_true = 4.0;  // +inf switches noise off
  GaussianPrior prior;     // w_true ~ N(m0, S0 / alpha_true)
  double alpha_true = 1.0;
  Sparsity sparsity = Sparsity::fraction(0.05);
  double smoothness = 4.0;  // basis spatial correlation length, pixels
  NoiseFamily noise_family = NoiseFamily::kGaussian;
  double depth_cap = 80.0;  // only pixels below the cap are sampled
};

struct SynthScene {
  BasisMap basis;
  Eigen::VectorXd w_true;
  std::vector<double> latent_true;  // H*W, row-major
  std::vector<double> depth_true;   // exp(latent_true)
  SparseDepthSet sparse;            // stored in sampling order for nested subsets
};

namespace detail {

// Separable Gaussian blur with reflected boundaries.
inline void smooth_field(std::vector<double>& field, int h, int w, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * (k / sigma) * (k / sigma));
    ksum += kernel[k + radius];
  }
  for (double& v : kernel) v /= ksum;

  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - i - 1;
    }
    return i;
  };

  std::vector<double> tmp(field.size());
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[k + radius] * field[static_cast<std::size_t>(u) * w + reflect(v + k, w)];
      }
      tmp[static_cast<std::size_t>(u) * w + v] = acc;
    }
  }
  for (int v = 0; v < w; ++v) {
    for (int u = 0; u < h; ++u) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[k + radius] * tmp[static_cast<std::size_t>(reflect(u + k, h)) * w + v];
      }
      field[static_cast<std::size_t>(u) * w + v] = acc;
    }
  }
}

inline void standardize(std::vector<double>& field) {
  const double n = static_cast<double>(field.size());
  double mean = 0.0;
  for (double v : field) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : field) var += (v - mean) * (v - mean);
  var /= n;
  const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  for (double& v : field) v = (v - mean) * scale;
}

}  // namespace detail

// Deterministic synthetic scene: smooth random bases, weights drawn from the
// configured prior, latent noise at precision beta_true, and sparse samples
// drawn without replacement from pixels under the depth cap.
inline SynthScene generate(const SynthConfig& cfg) {
  validate_prior(cfg.prior);
  if (cfg.prior.num_bases() != cfg.num_bases) {
    throw Error(ErrorCode::kDimension, "generate: prior dimension != num_bases");
  }
  if (!(cfg.beta_true > 0.0)) {
    throw Error(ErrorCode::kDomain, "generate: beta_true must be positive");
  }
  if (!(cfg.alpha_true > 0.0)) {
    throw Error(ErrorCode::kDomain, "generate: alpha_true must be positive");
  }
  const int h = cfg.height, w = cfg.width, m = cfg.num_bases;
  const long total = static_cast<long>(h) * w;
  Rng rng(cfg.seed);

  // Smooth random basis channels; channel 0 pinned to 1 when bias is set.
  std::vector<double> values(static_cast<std::size_t>(total) * m);
  const int first_channel = cfg.bias ? 1 : 0;
  for (int c = first_channel; c < m; ++c) {
    std::vector<double> field(total);
    for (double& v : field) v = rng.normal();
    detail::smooth_field(field, h, w, cfg.smoothness);
    detail::standardize(field);
    for (long p = 0; p < total; ++p) {
      values[static_cast<std::size_t>(p) * m + c] = field[p];
    }
  }
  if (cfg.bias) {
    for (long p = 0; p < total; ++p) values[static_cast<std::size_t>(p) * m] = 1.0;
  }
  BasisMap basis(h, w, m, std::move(values), cfg.bias);

  // w_true ~ N(m0, S0 / alpha_true).
  Eigen::LLT<Eigen::MatrixXd> llt(Eigen::MatrixXd(cfg.prior.cov / cfg.alpha_true));
  Eigen::VectorXd eps(m);
  for (int i = 0; i < m; ++i) eps[i] = rng.normal();
  Eigen::VectorXd w_true = cfg.prior.mean + llt.matrixL() * eps;

  // Latent field plus noise; beta_true = +inf is the noise-off switch.
  const bool noiseless = std::isinf(cfg.beta_true);
  const double gauss_sd = noiseless ? 0.0 : 1.0 / std::sqrt(cfg.beta_true);
  const double laplace_b = noiseless ? 0.0 : std::sqrt(0.5 / cfg.beta_true);
  std::vector<double> latent(total), depth(total);
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      double z = basis.phi(u, v).dot(w_true);
      if (!noiseless) {
        z += cfg.noise_family == NoiseFamily::kGaussian ? gauss_sd * rng.normal()
                                                        : rng.laplace(laplace_b);
      }
      const long p = static_cast<long>(u) * w + v;
      latent[p] = z;
      depth[p] = std::exp(z);
    }
  }

  // Sample measurement pixels without replacement below the cap.
  std::vector<long> eligible;
  eligible.reserve(total);
  for (long p = 0; p < total; ++p) {
    if (depth[p] < cfg.depth_cap) eligible.push_back(p);
  }
  const long want = cfg.sparsity.resolve(total);
  if (want > static_cast<long>(eligible.size())) {
    throw Error(ErrorCode::kDomain,
                "generate: sparsity count " + std::to_string(want) + " exceeds " +
                    std::to_string(eligible.size()) + " eligible pixels");
  }
  rng.shuffle(eligible);
  std::vector<SparseDepthEntry> entries;
  entries.reserve(want);
  for (long i = 0; i < want; ++i) {
    const long p = eligible[i];
    entries.push_back({static_cast<int>(p / w), static_cast<int>(p % w), depth[p]});
  }

  return SynthScene{std::move(basis), std::move(w_true), std::move(latent),
                    std::move(depth), SparseDepthSet(std::move(entries))};
}

// Nested measurement subsets for controlled sparsity comparisons: each level
// is a prefix of the scene's sampling order, so smaller sets are contained in
// larger ones.
inline std::vector<SparseDepthSet> sample_sparsity_sweep(const SynthScene& scene,
                                                         const std::vector<long>& levels) {
  std::vector<SparseDepthSet> out;
  out.reserve(levels.size());
  for (long level : levels) {
    if (level < 0 || level > static_cast<long>(scene.sparse.size())) {
      throw Error(ErrorCode::kDomain,
                  "sample_sparsity_sweep: level " + std::to_string(level) +
                      " exceeds the " + std::to_string(scene.sparse.size()) +
                      " sampled pixels");
    }
    std::vector<SparseDepthEntry> subset(scene.sparse.entries().begin(),
                                         scene.sparse.entries().begin() + level);
    out.emplace_back(std::move(subset));
  }
  return out;
}

// Testing oracle: the posterior through explicit joint-Gaussian conditioning
// over (w, z), an algebraically independent route from the precision-form
// update. Limited to tiny systems.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> brute_force_posterior(
    const RegressionSystem& sys, const GaussianPrior& prior, double alpha, double beta) {
  validate_prior(prior);
  const Eigen::Index n = sys.n_obs();
  const Eigen::Index m = prior.num_bases();
  if (m > 3 || n > 8) {
    throw Error(ErrorCode::kDomain, "brute_force_posterior: limited to M <= 3, N <= 8");
  }
  const Eigen::MatrixXd c = prior.cov / alpha;
  if (n == 0) return {prior.mean, c};
  if (sys.n_bases() != m) {
    throw Error(ErrorCode::kDimension, "brute_force_posterior: dimension mismatch");
  }
  const Eigen::MatrixXd cross = c * sys.design.transpose();  // cov(w, z), M x N
  const Eigen::MatrixXd s = sys.design * cross +
                            Eigen::MatrixXd::Identity(n, n) / beta;  // cov(z, z)
  Eigen::FullPivLU<Eigen::MatrixXd> lu(s);
  const Eigen::MatrixXd gain = cross * lu.inverse();  // M x N
  Eigen::VectorXd mean = prior.mean + gain * (sys.targets - sys.design * prior.mean);
  Eigen::MatrixXd cov = c - gain * cross.transpose();
  cov = 0.5 * (cov + cov.transpose());
  return {std::move(mean), std::move(cov)};
}

}  // namespace bdbf
