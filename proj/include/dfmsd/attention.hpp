#pragma once

#include "dfmsd/random.hpp"
#include "dfmsd/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace dfmsd {

template <typename Scalar> Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0))
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// Bilinear resampling of an H x W grid (half-pixel centers, edge clamped).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
resample_bilinear(const Eigen::MatrixBase<Derived> &src, int out_h, int out_w) {
  using Scalar = typename Derived::Scalar;
  const int in_h = static_cast<int>(src.rows());
  const int in_w = static_cast<int>(src.cols());
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(out_h, out_w);
  if (in_h == out_h && in_w == out_w) {
    out = src;
    return out;
  }
  const Scalar sy = Scalar(in_h) / Scalar(out_h);
  const Scalar sx = Scalar(in_w) / Scalar(out_w);
  for (int y = 0; y < out_h; ++y) {
    Scalar fy = std::clamp((Scalar(y) + Scalar(0.5)) * sy - Scalar(0.5), Scalar(0), Scalar(in_h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, in_h - 1);
    const Scalar ty = fy - Scalar(y0);
    for (int x = 0; x < out_w; ++x) {
      Scalar fx = std::clamp((Scalar(x) + Scalar(0.5)) * sx - Scalar(0.5), Scalar(0), Scalar(in_w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, in_w - 1);
      const Scalar tx = fx - Scalar(x0);
      out(y, x) = (Scalar(1) - ty) * ((Scalar(1) - tx) * src(y0, x0) + tx * src(y0, x1)) +
                  ty * ((Scalar(1) - tx) * src(y1, x0) + tx * src(y1, x1));
    }
  }
  return out;
}

/**
 * Channel attention: sigmoid of each channel's spatial mean divided by tau.
 * Returns a C-vector with entries in (0,1).
 */
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> channel_attention(const FeatureMap<Scalar> &teacher,
                                                           Scalar tau) {
  if (!(tau > Scalar(0)))
    throw std::invalid_argument("channel_attention: tau must be > 0");
  teacher.require_finite("channel_attention");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out = teacher.data.rowwise().mean() / tau;
  return out.unaryExpr([](Scalar v) { return sigmoid(v); });
}

/**
 * Spatial attention: sigmoid of each position's squared L2 norm over channels,
 * divided by C*tau, returned as an H x W grid.
 *
 * When a target size is given and differs from the feature's own, the map is
 * bilinearly resampled to it; otherwise alignment is the identity.
 */
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>
spatial_attention(const FeatureMap<Scalar> &teacher, Scalar tau, int target_h = 0, int target_w = 0) {
  if (!(tau > Scalar(0)))
    throw std::invalid_argument("spatial_attention: tau must be > 0");
  teacher.require_finite("spatial_attention");
  const Scalar denom = Scalar(teacher.channels) * tau;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> grid(teacher.height, teacher.width);
  for (int h = 0; h < teacher.height; ++h)
    for (int w = 0; w < teacher.width; ++w)
      grid(h, w) = sigmoid(teacher.data.col(h * teacher.width + w).squaredNorm() / denom);
  if (target_h <= 0 || target_w <= 0)
    return grid;
  return resample_bilinear(grid, target_h, target_w);
}

template <typename Scalar> struct AttentionPair {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> channel;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> spatial;
};

template <typename Scalar>
AttentionPair<Scalar> dual_attention(const FeatureMap<Scalar> &teacher, Scalar tau, int target_h = 0,
                                     int target_w = 0) {
  return {channel_attention(teacher, tau), spatial_attention(teacher, tau, target_h, target_w)};
}

/// Binary keep-masks; 0 marks a masked position or channel.
struct DualMask {
  Eigen::MatrixXd spatial_mask; ///< H x W
  Eigen::VectorXd channel_mask; ///< C
  double rho = 0.0;

  int masked_positions() const {
    return static_cast<int>((1.0 - spatial_mask.array()).sum() + 0.5);
  }
  int masked_channels() const { return static_cast<int>((1.0 - channel_mask.array()).sum() + 0.5); }
};

/// Number of entries a ratio rho selects out of n (round half away from zero).
inline int masked_count(double rho, int n) {
  return static_cast<int>(std::lround(rho * static_cast<double>(n)));
}

namespace detail {

/// Indices of the k highest scores; equal scores are ordered by a seeded
/// random permutation.
template <typename Scalar>
std::vector<int> top_k_indices(const Scalar *scores, int n, int k, std::uint64_t seed) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(),
                   [scores](int a, int b) { return scores[a] > scores[b]; });
  order.resize(static_cast<std::size_t>(std::clamp(k, 0, n)));
  return order;
}

} // namespace detail

/**
 * Masks the round(rho*H*W) highest-attention positions and the round(rho*C)
 * highest-attention channels.
 */
template <typename Scalar>
DualMask build_masks(const AttentionPair<Scalar> &att, double rho, std::uint64_t seed) {
  if (!(rho > 0.0 && rho < 1.0))
    throw std::invalid_argument("build_masks: rho must lie in (0,1)");
  const int h = static_cast<int>(att.spatial.rows());
  const int w = static_cast<int>(att.spatial.cols());
  const int c = static_cast<int>(att.channel.size());

  DualMask mask;
  mask.rho = rho;
  mask.spatial_mask = Eigen::MatrixXd::Ones(h, w);
  mask.channel_mask = Eigen::VectorXd::Ones(c);

  // row-major flattening so index = y*W + x
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> spatial = att.spatial;
  for (int idx : detail::top_k_indices(spatial.data(), h * w, masked_count(rho, h * w),
                                       derive_seed(seed, {0})))
    mask.spatial_mask(idx / w, idx % w) = 0.0;
  for (int idx : detail::top_k_indices(att.channel.data(), c, masked_count(rho, c),
                                       derive_seed(seed, {1})))
    mask.channel_mask(idx) = 0.0;
  return mask;
}

/// Zeroes masked positions and masked channels of a student feature.
template <typename Scalar>
FeatureMap<Scalar> apply_mask(const FeatureMap<Scalar> &student, const DualMask &mask) {
  if (mask.spatial_mask.rows() != student.height || mask.spatial_mask.cols() != student.width ||
      mask.channel_mask.size() != student.channels)
    throw ShapeError("apply_mask: mask shape does not match feature");
  FeatureMap<Scalar> out = student;
  for (int hw = 0; hw < student.spatial(); ++hw) {
    const Scalar keep = static_cast<Scalar>(mask.spatial_mask(hw / student.width, hw % student.width));
    out.data.col(hw).array() *= mask.channel_mask.template cast<Scalar>().array() * keep;
  }
  return out;
}

/// Keep-mask expanded to the C x (H*W) layout of FeatureMap.
inline Eigen::MatrixXd expand_mask(const DualMask &mask) {
  const Eigen::Index h = mask.spatial_mask.rows(), w = mask.spatial_mask.cols();
  Eigen::RowVectorXd spatial(h * w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x)
      spatial(y * w + x) = mask.spatial_mask(y, x);
  return mask.channel_mask * spatial;
}

} // namespace dfmsd
