#include "bdbf/synth.hpp"

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "bdbf/common.hpp"
#include "bdbf/rng.hpp"

namespace {

using bdbf::Error;
using bdbf::ErrorCode;
using bdbf::Rng;
using bdbf::Sparsity;
using bdbf::SynthConfig;

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.height = 24;
  cfg.width = 16;
  cfg.num_bases = 4;
  cfg.bias = true;
  cfg.seed = 7;
  cfg.prior.mean = Eigen::VectorXd::Zero(4);
  cfg.prior.cov = 0.25 * Eigen::MatrixXd::Identity(4, 4);
  cfg.sparsity = Sparsity::count(40);
  return cfg;
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform01();
    EXPECT_EQ(u, b.uniform01());
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  Rng c(43);
  bool any_diff = false;
  Rng a2(42);
  for (int i = 0; i < 10; ++i) any_diff |= a2.uniform01() != c.uniform01();
  EXPECT_TRUE(any_diff);
}

TEST(Rng, BelowStaysInRangeAndIsRoughlyUniform) {
  Rng rng(1);
  const std::uint64_t n = 7;
  std::vector<long> counts(n, 0);
  const int draws = 70000;
  for (int i = 0; i < draws; ++i) {
    const std::uint64_t x = rng.below(n);
    ASSERT_LT(x, n);
    ++counts[x];
  }
  for (long c : counts) EXPECT_NEAR(c, draws / 7.0, 500.0);
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng rng(3);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  auto shuffled = v;
  rng.shuffle(shuffled);
  EXPECT_NE(shuffled, v);
  std::sort(shuffled.begin(), shuffled.end());
  EXPECT_EQ(shuffled, v);

  Rng r1(9), r2(9);
  std::vector<int> s1 = v, s2 = v;
  r1.shuffle(s1);
  r2.shuffle(s2);
  EXPECT_EQ(s1, s2);
}

TEST(Rng, MomentsOfNormalAndLaplace) {
  Rng rng(11);
  const int n = 200000;
  double sum_n = 0.0, sum_n2 = 0.0, sum_l = 0.0, sum_labs = 0.0;
  const double b = 0.7;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum_n += x;
    sum_n2 += x * x;
    const double y = rng.laplace(b);
    sum_l += y;
    sum_labs += std::abs(y);
  }
  EXPECT_NEAR(sum_n / n, 0.0, 0.01);
  EXPECT_NEAR(sum_n2 / n, 1.0, 0.02);
  EXPECT_NEAR(sum_l / n, 0.0, 0.01);
  // E|x| = b for Laplace(0, b).
  EXPECT_NEAR(sum_labs / n, b, 0.01);
}

TEST(Generate, DeterministicPerSeed) {
  const auto cfg = small_config();
  const auto a = bdbf::generate(cfg);
  const auto b = bdbf::generate(cfg);
  EXPECT_EQ((a.w_true - b.w_true).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(a.depth_true, b.depth_true);
  EXPECT_EQ(a.basis.values(), b.basis.values());
  ASSERT_EQ(a.sparse.size(), b.sparse.size());
  for (std::size_t i = 0; i < a.sparse.size(); ++i) {
    EXPECT_EQ(a.sparse.entries()[i].row, b.sparse.entries()[i].row);
    EXPECT_EQ(a.sparse.entries()[i].col, b.sparse.entries()[i].col);
    EXPECT_EQ(a.sparse.entries()[i].depth, b.sparse.entries()[i].depth);
  }

  auto cfg2 = cfg;
  cfg2.seed = 8;
  const auto c = bdbf::generate(cfg2);
  EXPECT_GT((a.w_true - c.w_true).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Generate, BiasChannelPinnedToOne) {
  const auto scene = bdbf::generate(small_config());
  EXPECT_TRUE(scene.basis.has_bias());
  for (int u = 0; u < scene.basis.height(); ++u) {
    for (int v = 0; v < scene.basis.width(); ++v) {
      ASSERT_EQ(scene.basis.value(u, v, 0), 1.0);
    }
  }
}

TEST(Generate, NonBiasChannelsAreStandardized) {
  const auto scene = bdbf::generate(small_config());
  const long total = static_cast<long>(scene.basis.height()) * scene.basis.width();
  for (int c = 1; c < scene.basis.num_bases(); ++c) {
    double mean = 0.0, var = 0.0;
    for (int u = 0; u < scene.basis.height(); ++u)
      for (int v = 0; v < scene.basis.width(); ++v) mean += scene.basis.value(u, v, c);
    mean /= static_cast<double>(total);
    for (int u = 0; u < scene.basis.height(); ++u)
      for (int v = 0; v < scene.basis.width(); ++v) {
        const double d = scene.basis.value(u, v, c) - mean;
        var += d * d;
      }
    var /= static_cast<double>(total);
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
}

TEST(Generate, NoiselessLatentEqualsBasisProjection) {
  auto cfg = small_config();
  cfg.beta_true = std::numeric_limits<double>::infinity();
  const auto scene = bdbf::generate(cfg);
  for (int u = 0; u < cfg.height; ++u) {
    for (int v = 0; v < cfg.width; ++v) {
      const double z = scene.basis.phi(u, v).dot(scene.w_true);
      const long p = static_cast<long>(u) * cfg.width + v;
      ASSERT_EQ(scene.latent_true[p], z);
      ASSERT_EQ(scene.depth_true[p], std::exp(z));
    }
  }
}

TEST(Generate, FullSparsityCoversEveryPixelOnce) {
  auto cfg = small_config();
  cfg.depth_cap = std::numeric_limits<double>::infinity();
  cfg.sparsity = Sparsity::count(static_cast<long>(cfg.height) * cfg.width);
  const auto scene = bdbf::generate(cfg);
  EXPECT_EQ(scene.sparse.size(), static_cast<std::size_t>(cfg.height) * cfg.width);
  std::set<std::pair<int, int>> seen;
  for (const auto& e : scene.sparse.entries()) {
    EXPECT_TRUE(seen.insert({e.row, e.col}).second);
    const long p = static_cast<long>(e.row) * cfg.width + e.col;
    EXPECT_EQ(e.depth, scene.depth_true[p]);
  }
}

TEST(Generate, NoiseVarianceMatchesConfiguredPrecision) {
  auto cfg = small_config();
  cfg.height = 128;
  cfg.width = 128;
  cfg.beta_true = 4.0;
  const auto scene = bdbf::generate(cfg);
  double var = 0.0;
  long n = 0;
  for (int u = 0; u < cfg.height; ++u) {
    for (int v = 0; v < cfg.width; ++v) {
      const long p = static_cast<long>(u) * cfg.width + v;
      const double r = scene.latent_true[p] - scene.basis.phi(u, v).dot(scene.w_true);
      var += r * r;
      ++n;
    }
  }
  var /= static_cast<double>(n);
  EXPECT_NEAR(var, 0.25, 0.0125);

  auto lap = cfg;
  lap.noise_family = bdbf::NoiseFamily::kLaplace;
  const auto lscene = bdbf::generate(lap);
  double abs_sum = 0.0;
  for (int u = 0; u < lap.height; ++u) {
    for (int v = 0; v < lap.width; ++v) {
      const long p = static_cast<long>(u) * lap.width + v;
      abs_sum += std::abs(lscene.latent_true[p] - lscene.basis.phi(u, v).dot(lscene.w_true));
    }
  }
  // E|r| = b = sqrt(0.5 / beta).
  EXPECT_NEAR(abs_sum / static_cast<double>(n), std::sqrt(0.125), 0.0125);
}

TEST(Generate, RejectsInvalidConfigs) {
  auto cfg = small_config();
  cfg.prior.mean = Eigen::VectorXd::Zero(3);
  cfg.prior.cov = Eigen::MatrixXd::Identity(3, 3);
  try {
    bdbf::generate(cfg);
    FAIL() << "expected dimension error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimension);
  }

  auto bad_beta = small_config();
  bad_beta.beta_true = 0.0;
  EXPECT_THROW(bdbf::generate(bad_beta), Error);
  auto bad_alpha = small_config();
  bad_alpha.alpha_true = -1.0;
  EXPECT_THROW(bdbf::generate(bad_alpha), Error);

  // A depth cap below every rendered depth leaves nothing to sample.
  auto capped = small_config();
  capped.depth_cap = 1e-9;
  capped.sparsity = Sparsity::count(1);
  try {
    bdbf::generate(capped);
    FAIL() << "expected domain error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDomain);
  }
}

TEST(SparsitySweep, LevelsAreNestedPrefixes) {
  const auto scene = bdbf::generate(small_config());
  const auto sets = bdbf::sample_sparsity_sweep(scene, {40, 5, 0});
  ASSERT_EQ(sets.size(), 3u);
  EXPECT_EQ(sets[0].size(), 40u);
  EXPECT_EQ(sets[1].size(), 5u);
  EXPECT_TRUE(sets[2].empty());
  for (std::size_t i = 0; i < sets[1].size(); ++i) {
    EXPECT_EQ(sets[1].entries()[i].row, sets[0].entries()[i].row);
    EXPECT_EQ(sets[1].entries()[i].col, sets[0].entries()[i].col);
    EXPECT_EQ(sets[1].entries()[i].depth, sets[0].entries()[i].depth);
  }

  EXPECT_THROW(bdbf::sample_sparsity_sweep(scene, {41}), Error);
  EXPECT_THROW(bdbf::sample_sparsity_sweep(scene, {-1}), Error);
}

TEST(SparsityResolve, FractionAndCount) {
  EXPECT_EQ(Sparsity::fraction(0.05).resolve(4096), 205);  // lround(204.8)
  EXPECT_EQ(Sparsity::fraction(0.0).resolve(100), 0);
  EXPECT_EQ(Sparsity::fraction(1.0).resolve(100), 100);
  EXPECT_EQ(Sparsity::count(37).resolve(100), 37);
  EXPECT_THROW(Sparsity::fraction(-0.1), Error);
  EXPECT_THROW(Sparsity::fraction(1.5), Error);
  EXPECT_THROW(Sparsity::count(-1), Error);
}

TEST(BruteForcePosterior, EmptySystemReturnsScaledPrior) {
  bdbf::GaussianPrior prior;
  prior.mean = Eigen::VectorXd::Constant(2, 1.5);
  prior.cov = Eigen::MatrixXd::Identity(2, 2) * 3.0;
  bdbf::RegressionSystem sys;
  sys.design.resize(0, 2);
  sys.targets.resize(0);
  const auto [mean, cov] = bdbf::brute_force_posterior(sys, prior, 2.0, 1.0);
  EXPECT_EQ((mean - prior.mean).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((cov - prior.cov / 2.0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(BruteForcePosterior, EnforcesSizeLimits) {
  bdbf::GaussianPrior prior;
  prior.mean = Eigen::VectorXd::Zero(4);
  prior.cov = Eigen::MatrixXd::Identity(4, 4);
  bdbf::RegressionSystem sys;
  sys.design = Eigen::MatrixXd::Ones(1, 4);
  sys.targets = Eigen::VectorXd::Ones(1);
  try {
    bdbf::brute_force_posterior(sys, prior, 1.0, 1.0);
    FAIL() << "expected domain error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDomain);
  }

  bdbf::GaussianPrior small;
  small.mean = Eigen::VectorXd::Zero(1);
  small.cov = Eigen::MatrixXd::Identity(1, 1);
  bdbf::RegressionSystem tall;
  tall.design = Eigen::MatrixXd::Ones(9, 1);
  tall.targets = Eigen::VectorXd::Ones(9);
  EXPECT_THROW(bdbf::brute_force_posterior(tall, small, 1.0, 1.0), Error);
}

}  // namespace
