#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "bdbf/common.hpp"

namespace bdbf {

// Laplace scale from a latent variance, via 2b^2 = sigma^2.
inline double laplace_scale(double var) {
  if (var < 0.0 || !std::isfinite(var)) {
    throw Error(ErrorCode::kDomain, "laplace_scale: variance must be >= 0");
  }
  return std::sqrt(var / 2.0);
}

// Normalized estimation error squared for one pixel. Normalization is by the
// distribution variance 2b^2, so a consistent Laplace estimator has expected
// NEES of exactly 1 regardless of scale.
inline double nees(double mu, double b, double z_true) {
  if (!(b > 0.0)) {
    throw Error(ErrorCode::kScale, "nees: Laplace scale must be positive");
  }
  const double r = mu - z_true;
  return r * r / (2.0 * b * b);
}

// Average NEES over a pixel set. Zero-scale pixels are excluded from the mean
// and counted separately.
struct CalibrationState {
  double mean_nees = 0.0;
  long n_pixels = 0;
  long n_skipped = 0;  // pixels with b = 0, excluded from the mean
};

inline CalibrationState measure_nees(std::span<const double> mu, std::span<const double> b,
                                     std::span<const double> z_true) {
  if (mu.size() != b.size() || mu.size() != z_true.size()) {
    throw Error(ErrorCode::kDimension, "measure_nees: array length mismatch");
  }
  CalibrationState state;
  double sum = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (b[i] < 0.0) {
      throw Error(ErrorCode::kScale, "measure_nees: negative Laplace scale");
    }
    if (b[i] == 0.0) {
      ++state.n_skipped;
      continue;
    }
    sum += nees(mu[i], b[i], z_true[i]);
    ++state.n_pixels;
  }
  if (state.n_pixels > 0) state.mean_nees = sum / static_cast<double>(state.n_pixels);
  return state;
}

// Pixel-count-weighted combination of two measurement batches.
inline CalibrationState merge(const CalibrationState& a, const CalibrationState& b) {
  CalibrationState out;
  out.n_pixels = a.n_pixels + b.n_pixels;
  out.n_skipped = a.n_skipped + b.n_skipped;
  if (out.n_pixels > 0) {
    out.mean_nees = (a.mean_nees * static_cast<double>(a.n_pixels) +
                     b.mean_nees * static_cast<double>(b.n_pixels)) /
                    static_cast<double>(out.n_pixels);
  }
  return out;
}

// Consistency rescaling applied at inference: sigma_bar^2 = eps_bar * sigma^2.
// Scaling every variance by the recorded mean NEES drives the mean NEES on
// the calibration set back to 1.
inline double apply_calibration(const CalibrationState& state, double var) {
  if (state.n_pixels <= 0) {
    throw Error(ErrorCode::kEmptySet, "apply_calibration: empty calibration state");
  }
  return state.mean_nees * var;
}

}  // namespace bdbf
