#include "bdbf/calibration.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bdbf/common.hpp"
#include "bdbf/rng.hpp"

namespace {

using bdbf::CalibrationState;
using bdbf::Error;
using bdbf::ErrorCode;

TEST(LaplaceScale, MapsVarianceThroughTwoBSquared) {
  EXPECT_EQ(bdbf::laplace_scale(2.0), 1.0);
  EXPECT_EQ(bdbf::laplace_scale(0.0), 0.0);
  EXPECT_EQ(bdbf::laplace_scale(0.5), 0.5);
  EXPECT_THROW(bdbf::laplace_scale(-1.0), Error);
  EXPECT_THROW(bdbf::laplace_scale(std::nan("")), Error);
}

TEST(Nees, NormalizesByDistributionVariance) {
  // Residual equal to the scale: (b)^2 / (2 b^2) = 0.5.
  EXPECT_EQ(bdbf::nees(2.0, 1.0, 1.0), 0.5);
  EXPECT_EQ(bdbf::nees(3.0, 1.0, 3.0), 0.0);
  EXPECT_EQ(bdbf::nees(0.0, 0.5, 1.0), 2.0);
  try {
    bdbf::nees(1.0, 0.0, 1.0);
    FAIL() << "expected scale error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kScale);
  }
  EXPECT_THROW(bdbf::nees(1.0, -1.0, 1.0), Error);
}

TEST(Nees, UnityMeanForTrueLaplaceResiduals) {
  bdbf::Rng rng(17);
  const int n = 1000000;
  const double b = 0.8;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = 4.0 + rng.laplace(b);
    sum += bdbf::nees(4.0, b, z);
  }
  // Var of a single NEES draw is 5 (fourth Laplace moment), so the SE of the
  // mean over 1e6 draws is about 0.0022.
  EXPECT_NEAR(sum / n, 1.0, 0.01);
}

TEST(Nees, HalvedScaleQuadruplesTheMean) {
  bdbf::Rng rng(19);
  const int n = 200000;
  const double b = 1.3;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.laplace(b);
    sum += bdbf::nees(0.0, b / 2.0, z);
  }
  EXPECT_NEAR(sum / n, 4.0, 0.1);
}

TEST(MeasureNees, SkipsZeroScalesAndRejectsNegative) {
  const std::vector<double> mu = {1.0, 2.0, 3.0};
  const std::vector<double> b = {1.0, 0.0, 1.0};
  const std::vector<double> z = {2.0, 2.0, 3.0};
  const auto state = bdbf::measure_nees(mu, b, z);
  EXPECT_EQ(state.n_pixels, 2);
  EXPECT_EQ(state.n_skipped, 1);
  EXPECT_NEAR(state.mean_nees, 0.25, 1e-15);  // (0.5 + 0) / 2

  const std::vector<double> neg = {1.0, -1.0, 1.0};
  EXPECT_THROW(bdbf::measure_nees(mu, neg, z), Error);
  const std::vector<double> short_z = {1.0};
  EXPECT_THROW(bdbf::measure_nees(mu, b, short_z), Error);

  const auto empty = bdbf::measure_nees({}, {}, {});
  EXPECT_EQ(empty.n_pixels, 0);
  EXPECT_EQ(empty.mean_nees, 0.0);
}

TEST(MergeState, WeightsByPixelCount) {
  CalibrationState a{2.0, 10, 1};
  CalibrationState b{1.0, 30, 2};
  const auto out = bdbf::merge(a, b);
  EXPECT_EQ(out.n_pixels, 40);
  EXPECT_EQ(out.n_skipped, 3);
  EXPECT_NEAR(out.mean_nees, 1.25, 1e-15);

  // Merging equals measuring the concatenation.
  const std::vector<double> mu = {0.0, 0.0, 0.0, 0.0};
  const std::vector<double> bs = {1.0, 2.0, 0.5, 1.0};
  const std::vector<double> z = {1.0, -1.0, 0.5, 2.0};
  const auto whole = bdbf::measure_nees(mu, bs, z);
  const auto left = bdbf::measure_nees(std::span(mu).first(2), std::span(bs).first(2),
                                       std::span(z).first(2));
  const auto right = bdbf::measure_nees(std::span(mu).last(2), std::span(bs).last(2),
                                        std::span(z).last(2));
  const auto merged = bdbf::merge(left, right);
  EXPECT_EQ(merged.n_pixels, whole.n_pixels);
  EXPECT_NEAR(merged.mean_nees, whole.mean_nees, 1e-15);
}

TEST(ApplyCalibration, RescalesVarianceByMeanNees) {
  CalibrationState state{4.0, 100, 0};
  EXPECT_EQ(bdbf::apply_calibration(state, 0.5), 2.0);
  CalibrationState identity{1.0, 100, 0};
  EXPECT_EQ(bdbf::apply_calibration(identity, 0.37), 0.37);
  CalibrationState empty{};
  try {
    bdbf::apply_calibration(empty, 1.0);
    FAIL() << "expected empty-set error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySet);
  }
}

TEST(ApplyCalibration, DrivesMeanNeesToOneOnTheSameSet) {
  // Miscalibrated scales (too confident by 2x in b, so 4x in variance).
  bdbf::Rng rng(23);
  const int n = 5000;
  std::vector<double> mu(n), b(n), z(n);
  for (int i = 0; i < n; ++i) {
    mu[i] = rng.normal();
    b[i] = 0.4;
    z[i] = mu[i] + rng.laplace(0.8);
  }
  const auto state = bdbf::measure_nees(mu, b, z);
  EXPECT_GT(state.mean_nees, 2.0);

  // Recalibrate: var' = eps_bar * var, so b' = sqrt(eps_bar) * b.
  std::vector<double> b2(n);
  for (int i = 0; i < n; ++i) {
    const double var = 2.0 * b[i] * b[i];
    b2[i] = bdbf::laplace_scale(bdbf::apply_calibration(state, var));
  }
  const auto after = bdbf::measure_nees(mu, b2, z);
  EXPECT_NEAR(after.mean_nees, 1.0, 1e-9);
}

}  // namespace
