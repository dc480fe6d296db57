#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bdbf/common.hpp"

namespace bdbf {

// Per-pixel M-channel feature field. Values are stored pixel-major with the
// M channels of one pixel contiguous, so extracting a design-matrix row is a
// single contiguous copy: value(u, v, c) lives at ((u*W)+v)*M + c.
class BasisMap {
 public:
  BasisMap(int height, int width, int num_bases, std::vector<double> values,
           bool has_bias)
      : height_(height),
        width_(width),
        num_bases_(num_bases),
        has_bias_(has_bias),
        values_(std::move(values)) {
    if (height_ < 1 || width_ < 1 || num_bases_ < 1) {
      throw Error(ErrorCode::kDimension, "BasisMap: H, W, M must be >= 1");
    }
    const std::size_t expected = static_cast<std::size_t>(height_) * width_ * num_bases_;
    if (values_.size() != expected) {
      throw Error(ErrorCode::kDimension,
                  "BasisMap: expected " + std::to_string(expected) + " values, got " +
                      std::to_string(values_.size()));
    }
    for (double v : values_) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kNumerical, "BasisMap: non-finite basis value");
      }
    }
    if (has_bias_) {
      for (std::size_t i = 0; i < values_.size(); i += num_bases_) {
        if (values_[i] != 1.0) {
          throw Error(ErrorCode::kNumerical,
                      "BasisMap: bias channel must be exactly 1.0 at every pixel");
        }
      }
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int num_bases() const { return num_bases_; }
  bool has_bias() const { return has_bias_; }
  const std::vector<double>& values() const { return values_; }

  bool in_bounds(int row, int col) const {
    return row >= 0 && row < height_ && col >= 0 && col < width_;
  }

  // Basis vector phi(row, col) as a view over the underlying storage.
  Eigen::Map<const Eigen::VectorXd> phi(int row, int col) const {
    const std::size_t offset =
        (static_cast<std::size_t>(row) * width_ + col) * num_bases_;
    return Eigen::Map<const Eigen::VectorXd>(values_.data() + offset, num_bases_);
  }

  double value(int row, int col, int channel) const {
    return values_[(static_cast<std::size_t>(row) * width_ + col) * num_bases_ + channel];
  }

 private:
  int height_;
  int width_;
  int num_bases_;
  bool has_bias_;
  std::vector<double> values_;
};

struct SparseDepthEntry {
  int row = 0;
  int col = 0;
  double depth = 0.0;
};

// Measurement set S: pixel coordinates paired with positive metric depths.
// Duplicates and sub-floor depths are rejected at construction; bounds are
// checked against the paired BasisMap in assemble().
class SparseDepthSet {
 public:
  SparseDepthSet() = default;

  explicit SparseDepthSet(std::vector<SparseDepthEntry> entries)
      : entries_(std::move(entries)) {
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(entries_.size());
    for (const auto& e : entries_) {
      if (e.row < 0 || e.col < 0) {
        throw Error(ErrorCode::kCoordinate, "SparseDepthSet: negative pixel index");
      }
      if (!std::isfinite(e.depth) || e.depth < kMinDepth) {
        throw Error(ErrorCode::kMeasurement,
                    "SparseDepthSet: depth must be finite and >= " +
                        std::to_string(kMinDepth));
      }
      const std::uint64_t key =
          (static_cast<std::uint64_t>(static_cast<std::uint32_t>(e.row)) << 32) |
          static_cast<std::uint32_t>(e.col);
      if (!seen.insert(key).second) {
        throw Error(ErrorCode::kDuplicate,
                    "SparseDepthSet: duplicate pixel (" + std::to_string(e.row) + ", " +
                        std::to_string(e.col) + ")");
      }
    }
  }

  const std::vector<SparseDepthEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<SparseDepthEntry> entries_;
};

// The N x M regression system (design matrix and log-depth targets) plus the
// mapping from each row back to its source pixel.
struct RegressionSystem {
  Eigen::MatrixXd design;   // N x M
  Eigen::VectorXd targets;  // N, log depth
  std::vector<std::pair<int, int>> pixel_index;

  Eigen::Index n_obs() const { return design.rows(); }
  Eigen::Index n_bases() const { return design.cols(); }
};

// Latent (log-depth) transform pair.
inline double latent_to_depth(double z) { return std::exp(z); }

inline double depth_to_latent(double d) {
  if (!(d > 0.0) || !std::isfinite(d)) {
    throw Error(ErrorCode::kDomain, "depth_to_latent: depth must be positive and finite");
  }
  return std::log(d);
}

// Extract basis rows at the measured pixels. An empty measurement set yields
// a legal N=0 system, which signals prior-only inference downstream.
inline RegressionSystem assemble(const BasisMap& basis, const SparseDepthSet& sparse) {
  const auto n = static_cast<Eigen::Index>(sparse.size());
  RegressionSystem sys;
  sys.design.resize(n, basis.num_bases());
  sys.targets.resize(n);
  sys.pixel_index.reserve(sparse.size());
  Eigen::Index i = 0;
  for (const auto& e : sparse.entries()) {
    if (!basis.in_bounds(e.row, e.col)) {
      throw Error(ErrorCode::kCoordinate,
                  "assemble: pixel (" + std::to_string(e.row) + ", " +
                      std::to_string(e.col) + ") outside " + std::to_string(basis.height()) +
                      "x" + std::to_string(basis.width()) + " basis");
    }
    sys.design.row(i) = basis.phi(e.row, e.col);
    sys.targets[i] = depth_to_latent(e.depth);
    sys.pixel_index.emplace_back(e.row, e.col);
    ++i;
  }
  return sys;
}

}  // namespace bdbf
