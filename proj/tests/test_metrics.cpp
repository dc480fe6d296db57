#include "bdbf/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bdbf/common.hpp"
#include "bdbf/rng.hpp"

namespace {

using bdbf::BaseMetric;
using bdbf::ErrorSpace;
using bdbf::EvalSet;
using bdbf::Error;
using bdbf::ErrorCode;

EvalSet make_set(std::vector<double> pred, std::vector<double> truth,
                 std::vector<double> mu, std::vector<double> b) {
  EvalSet set;
  set.pred_depth = std::move(pred);
  set.true_depth = std::move(truth);
  set.latent_mu = std::move(mu);
  set.latent_b = std::move(b);
  set.valid.assign(set.pred_depth.size(), true);
  return set;
}

// Set where only the latent columns matter.
EvalSet latent_set(std::vector<double> mu, std::vector<double> b,
                   std::vector<double> z_true) {
  std::vector<double> truth(z_true.size());
  for (std::size_t i = 0; i < z_true.size(); ++i) truth[i] = std::exp(z_true[i]);
  std::vector<double> pred = truth;
  return make_set(std::move(pred), std::move(truth), std::move(mu), std::move(b));
}

TEST(DepthMetrics, PerfectPrediction) {
  const auto set = make_set({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}, {0, 0, 0}, {1, 1, 1});
  const auto m = bdbf::depth_metrics(set);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.delta1, 100.0);
}

TEST(DepthMetrics, Delta1ThresholdIsStrict) {
  // Ratio 1.3 misses; ratio 1.2 hits; ratio exactly 1.25 misses.
  const auto miss = bdbf::depth_metrics(make_set({1.3}, {1.0}, {0}, {1}));
  EXPECT_EQ(miss.delta1, 0.0);
  const auto hit = bdbf::depth_metrics(make_set({1.2}, {1.0}, {0}, {1}));
  EXPECT_EQ(hit.delta1, 100.0);
  const auto edge = bdbf::depth_metrics(make_set({1.25}, {1.0}, {0}, {1}));
  EXPECT_EQ(edge.delta1, 0.0);
}

TEST(DepthMetrics, HandErrors) {
  const auto set = make_set({11.0, 12.0, 13.0}, {10.0, 10.0, 10.0}, {0, 0, 0}, {1, 1, 1});
  const auto m = bdbf::depth_metrics(set);
  EXPECT_NEAR(m.mae, 2.0, 1e-14);
  EXPECT_NEAR(m.rmse, std::sqrt(14.0 / 3.0), 1e-14);
  // Ratios 1.1, 1.2, 1.3: two hits of three.
  EXPECT_NEAR(m.delta1, 200.0 / 3.0, 1e-12);
}

TEST(DepthMetrics, InvalidPixelsAreExcluded) {
  auto set = make_set({5.0, 100.0}, {5.0, 1.0}, {0, 0}, {1, 1});
  set.valid[1] = false;
  const auto m = bdbf::depth_metrics(set);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.delta1, 100.0);

  set.valid[0] = false;
  try {
    bdbf::depth_metrics(set);
    FAIL() << "expected empty-set error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySet);
  }
}

TEST(EvalSetValidate, FlagsBadColumns) {
  auto set = make_set({1.0}, {1.0}, {0.0}, {1.0});
  set.latent_b.push_back(1.0);
  EXPECT_THROW(set.validate(), Error);

  auto neg_depth = make_set({1.0}, {-1.0}, {0.0}, {1.0});
  try {
    neg_depth.validate();
    FAIL() << "expected measurement error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMeasurement);
  }
  // The same pixel marked invalid passes validation untouched.
  neg_depth.valid[0] = false;
  EXPECT_NO_THROW(neg_depth.validate());

  auto neg_b = make_set({1.0}, {1.0}, {0.0}, {-0.5});
  try {
    neg_b.validate();
    FAIL() << "expected scale error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kScale);
  }
}

TEST(Ause, OracleOrderedUncertaintyGivesZero) {
  // Uncertainty strictly proportional to the true latent error: the method
  // curve coincides with the oracle curve.
  bdbf::Rng rng(29);
  std::vector<double> mu(60), b(60), z(60);
  for (int i = 0; i < 60; ++i) {
    z[i] = 0.0;
    mu[i] = rng.normal();
    b[i] = 0.5 * std::abs(mu[i]);
  }
  const auto result = bdbf::ause(latent_set(mu, b, z));
  EXPECT_EQ(result.value, 0.0);
  EXPECT_EQ(result.curve.abscissa.size(), 100u);
  for (double gap : result.curve.ordinate) EXPECT_EQ(gap, 0.0);
}

TEST(Ause, ThreePixelHandEnumeration) {
  // Latent errors {3, 2, 1}, uncertainty reversed {1, 2, 3}.
  // f = 0:   both keep all:          gap 0
  // f = 1/3: method 2.5, oracle 1.5: gap 1
  // f = 2/3: method 3.0, oracle 1.0: gap 2
  // Trapezoid area = (1/3)(0+1)/2 + (1/3)(1+2)/2 = 2/3.
  const auto set = latent_set({3.0, 2.0, 1.0}, {1.0, 2.0, 3.0}, {0.0, 0.0, 0.0});
  const auto result = bdbf::ause(set, BaseMetric::kMae, 1.0 / 3.0);
  ASSERT_EQ(result.curve.ordinate.size(), 3u);
  EXPECT_NEAR(result.curve.ordinate[0], 0.0, 1e-12);
  EXPECT_NEAR(result.curve.ordinate[1], 1.0, 1e-12);
  EXPECT_NEAR(result.curve.ordinate[2], 2.0, 1e-12);
  EXPECT_NEAR(result.value, 2.0 / 3.0, 1e-12);
}

TEST(Ause, InvariantUnderUncertaintyRescaling) {
  bdbf::Rng rng(31);
  std::vector<double> mu(40), b(40), z(40);
  for (int i = 0; i < 40; ++i) {
    z[i] = rng.normal();
    mu[i] = z[i] + rng.normal();
    b[i] = 0.1 + rng.uniform01();
  }
  const auto base = bdbf::ause(latent_set(mu, b, z));
  for (double c : {17.0, 0.25}) {
    std::vector<double> scaled = b;
    for (double& v : scaled) v *= c;
    const auto result = bdbf::ause(latent_set(mu, scaled, z));
    EXPECT_DOUBLE_EQ(result.value, base.value);
  }
}

TEST(Ause, DepthSpaceReadsDepthColumns) {
  // Perfect depth, imperfect latent mean: depth-space curves are identically
  // zero while latent-space AUSE sees the mismatch.
  EvalSet set = make_set({1.0, 2.0, 3.0, 4.0}, {1.0, 2.0, 3.0, 4.0},
                         {0.5, -0.2, 1.4, 0.9}, {0.1, 0.9, 0.3, 0.6});
  const auto depth = bdbf::ause(set, BaseMetric::kMae, 0.25, ErrorSpace::kDepth);
  EXPECT_EQ(depth.value, 0.0);
  const auto latent = bdbf::ause(set, BaseMetric::kMae, 0.25, ErrorSpace::kLatent);
  EXPECT_GT(latent.value, 0.0);
}

TEST(Ause, RmseVariantAndDomainChecks) {
  const auto set = latent_set({3.0, 2.0, 1.0}, {1.0, 2.0, 3.0}, {0.0, 0.0, 0.0});
  const auto result = bdbf::ause(set, BaseMetric::kRmse, 1.0 / 3.0);
  // f = 2/3: method keeps the worst pixel (3), oracle keeps the best (1).
  EXPECT_NEAR(result.curve.ordinate[2], 2.0, 1e-12);
  // f = 1/3: sqrt((9+4)/2) - sqrt((4+1)/2).
  EXPECT_NEAR(result.curve.ordinate[1],
              std::sqrt(13.0 / 2.0) - std::sqrt(5.0 / 2.0), 1e-12);

  EXPECT_THROW(bdbf::ause(set, BaseMetric::kMae, 0.0), Error);
  EXPECT_THROW(bdbf::ause(set, BaseMetric::kMae, 1.5), Error);
  const auto tiny = latent_set({1.0}, {1.0}, {0.0});
  EXPECT_THROW(bdbf::ause(tiny), Error);
}

TEST(LaplaceQuantile, KnownValuesAndDomain) {
  EXPECT_NEAR(bdbf::laplace_quantile(0.75), std::log(2.0), 1e-12);
  EXPECT_EQ(bdbf::laplace_quantile(0.5), 0.0);
  EXPECT_THROW(bdbf::laplace_quantile(0.49), Error);
  EXPECT_THROW(bdbf::laplace_quantile(1.0), Error);
}

TEST(Auce, ExactPredictionsScoreHalf) {
  // Zero residual everywhere: every interval covers, p_hat = 1, and the
  // symmetric grid averages |p - 1| to exactly one half.
  std::vector<double> mu(8, 1.3), b(8, 0.7), z(8, 1.3);
  const auto result = bdbf::auce(latent_set(mu, b, z));
  EXPECT_NEAR(result.value, 0.5, 1e-12);
  EXPECT_EQ(result.curve.abscissa.size(), 100u);
  EXPECT_NEAR(result.curve.abscissa.front(), 1.0 / 101.0, 1e-15);
  EXPECT_NEAR(result.curve.abscissa.back(), 100.0 / 101.0, 1e-15);
}

TEST(Auce, CalibratedLaplaceResidualsScoreNearZero) {
  bdbf::Rng rng(37);
  const int n = 200000;
  std::vector<double> mu(n), b(n), z(n);
  for (int i = 0; i < n; ++i) {
    mu[i] = 0.0;
    b[i] = 0.25 + rng.uniform01();
    z[i] = rng.laplace(b[i]);
  }
  const auto result = bdbf::auce(latent_set(mu, b, z));
  EXPECT_LE(result.value, 0.01);
}

TEST(Auce, MiscalibrationIsDetected) {
  // Scales reported 4x too small: intervals undercover badly.
  bdbf::Rng rng(41);
  const int n = 20000;
  std::vector<double> mu(n, 0.0), b(n), z(n);
  for (int i = 0; i < n; ++i) {
    b[i] = 0.25;
    z[i] = rng.laplace(1.0);
  }
  const auto result = bdbf::auce(latent_set(mu, b, z));
  EXPECT_GT(result.value, 0.2);
  EXPECT_THROW(bdbf::auce(latent_set(mu, b, z), 1), Error);
}

TEST(Nll, HandValues) {
  // mu = z with b = 0.5: |r|/b + ln b + ln 2 = 0.
  EXPECT_NEAR(bdbf::nll(latent_set({1.0}, {0.5}, {1.0})), 0.0, 1e-15);
  // mu = z with b = 1: ln 2.
  EXPECT_NEAR(bdbf::nll(latent_set({0.3}, {1.0}, {0.3})), std::log(2.0), 1e-15);
  // Unit residual with b = 1: 1 + ln 2.
  EXPECT_NEAR(bdbf::nll(latent_set({1.0}, {1.0}, {0.0})), 1.0 + std::log(2.0), 1e-15);
}

TEST(Nll, ScaleShiftDecomposition) {
  bdbf::Rng rng(43);
  std::vector<double> mu(30), b(30), z(30);
  for (int i = 0; i < 30; ++i) {
    mu[i] = rng.normal();
    z[i] = mu[i] + 0.3 * rng.normal();
    b[i] = 0.2 + rng.uniform01();
  }
  const double base = bdbf::nll(latent_set(mu, b, z));
  // Scaling residuals and scales together adds exactly ln c.
  const double c = 3.0;
  std::vector<double> mu2(30), b2(30);
  for (int i = 0; i < 30; ++i) {
    mu2[i] = z[i] + c * (mu[i] - z[i]);
    b2[i] = c * b[i];
  }
  EXPECT_NEAR(bdbf::nll(latent_set(mu2, b2, z)), base + std::log(c), 1e-12);
}

TEST(Nll, RejectsZeroScaleOnValidPixel) {
  auto set = latent_set({1.0, 2.0}, {1.0, 0.0}, {1.0, 2.0});
  try {
    bdbf::nll(set);
    FAIL() << "expected scale error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kScale);
  }
  set.valid[1] = false;
  EXPECT_NO_THROW(bdbf::nll(set));
}

TEST(EnsembleMeanVar, HandCases) {
  const std::vector<double> two = {1.0, 3.0};
  const auto [mu2, var2] = bdbf::ensemble_mean_var(two);
  EXPECT_EQ(mu2, 2.0);
  EXPECT_EQ(var2, 1.0);

  const std::vector<double> one = {4.2};
  const auto [mu1, var1] = bdbf::ensemble_mean_var(one);
  EXPECT_EQ(mu1, 4.2);
  EXPECT_EQ(var1, 0.0);

  const std::vector<double> three = {1.0, 2.0, 3.0};
  const auto [mu3, var3] = bdbf::ensemble_mean_var(three);
  EXPECT_EQ(mu3, 2.0);
  EXPECT_NEAR(var3, 2.0 / 3.0, 1e-15);

  EXPECT_THROW(bdbf::ensemble_mean_var({}), Error);
}

TEST(EnsemblePredictive, AddsMeanOfMemberVariances) {
  const std::vector<double> means = {1.0, 3.0};
  const std::vector<double> vars = {1.0, 1.0};
  const auto [mu, var] = bdbf::ensemble_predictive(means, vars);
  EXPECT_EQ(mu, 2.0);
  EXPECT_EQ(var, 2.0);

  const std::vector<double> zero_vars = {0.0, 0.0};
  const auto [mu0, var0] = bdbf::ensemble_predictive(means, zero_vars);
  const auto [mum, varm] = bdbf::ensemble_mean_var(means);
  EXPECT_EQ(mu0, mum);
  EXPECT_EQ(var0, varm);

  const std::vector<double> single = {5.0};
  const std::vector<double> single_var = {0.25};
  const auto [mus, vars_out] = bdbf::ensemble_predictive(single, single_var);
  EXPECT_EQ(mus, 5.0);
  EXPECT_EQ(vars_out, 0.25);

  const std::vector<double> short_vars = {1.0};
  EXPECT_THROW(bdbf::ensemble_predictive(means, short_vars), Error);
}

TEST(EnsembleMeanVar, PermutationInvariant) {
  bdbf::Rng rng(47);
  std::vector<double> means(9);
  for (double& v : means) v = rng.normal();
  const auto [mu_a, var_a] = bdbf::ensemble_mean_var(means);
  std::vector<double> shuffled = means;
  rng.shuffle(shuffled);
  const auto [mu_b, var_b] = bdbf::ensemble_mean_var(shuffled);
  EXPECT_NEAR(mu_b, mu_a, 1e-14);
  EXPECT_NEAR(var_b, var_a, 1e-14);
}

}  // namespace
