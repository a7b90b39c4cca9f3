#pragma once

#include "dfmsd/types.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace dfmsd {

/// Floor on the standard deviation used as a divisor.
inline constexpr double kStdFloor = 1e-12;

template <typename Scalar> struct StandardizedFeature {
  FeatureMap<Scalar> data;
  Scalar mu = 0;
  Scalar sd = 0;
};

namespace detail {

/// Standardizes a block in place; constant blocks become zero with sd 0.
template <typename Derived> auto standardize_block(Eigen::MatrixBase<Derived> &&block) {
  using Scalar = typename Derived::Scalar;
  const Scalar mu = block.mean();
  if (block.maxCoeff() == block.minCoeff()) {
    block.setZero();
    return std::pair<Scalar, Scalar>{mu, Scalar(0)};
  }
  block.array() -= mu;
  const Scalar sd = std::sqrt(block.squaredNorm() / Scalar(block.size()));
  block /= std::max(sd, Scalar(kStdFloor));
  return std::pair<Scalar, Scalar>{mu, sd};
}

} // namespace detail

/**
 * Removes the global mean and divides by the global (population) standard
 * deviation over all C*H*W entries.
 */
template <typename Scalar> StandardizedFeature<Scalar> standardize(const FeatureMap<Scalar> &feat) {
  StandardizedFeature<Scalar> out{feat, 0, 0};
  auto [mu, sd] = detail::standardize_block(out.data.data.reshaped());
  out.mu = mu;
  out.sd = sd;
  return out;
}

/// Per-channel variant: each channel is standardized over its H*W entries.
/// mu and sd report the averages over channels.
template <typename Scalar>
StandardizedFeature<Scalar> standardize_per_channel(const FeatureMap<Scalar> &feat) {
  StandardizedFeature<Scalar> out{feat, 0, 0};
  for (int c = 0; c < feat.channels; ++c) {
    auto [mu, sd] = detail::standardize_block(out.data.data.row(c));
    out.mu += mu / Scalar(feat.channels);
    out.sd += sd / Scalar(feat.channels);
  }
  return out;
}

/**
 * Pearson correlation coefficient of two equal-length vectors, clamped to
 * [-1,1]. Returns 0 when either side is constant.
 */
template <typename DerivedS, typename DerivedT>
typename DerivedS::Scalar pearson(const Eigen::MatrixBase<DerivedS> &s, const Eigen::MatrixBase<DerivedT> &t) {
  using Scalar = typename DerivedS::Scalar;
  if (s.size() != t.size())
    throw ShapeError("pearson: length mismatch");
  if (s.size() < 2)
    throw std::invalid_argument("pearson: needs at least two entries");
  const auto sc = (s.reshaped().array() - s.mean()).eval();
  const auto tc = (t.reshaped().array() - t.mean()).eval();
  if (s.maxCoeff() == s.minCoeff() || t.maxCoeff() == t.minCoeff())
    return Scalar(0);
  // a single square root keeps pearson(s, s) and pearson(s, -s) exact
  const Scalar denom = std::sqrt((sc * sc).sum() * (tc * tc).sum());
  const Scalar p = (sc * tc).sum() / std::max(denom, Scalar(kStdFloor * kStdFloor));
  return std::clamp(p, Scalar(-1), Scalar(1));
}

/// Mean squared error of two same-shape features, normalized by C*H*W.
template <typename Scalar> Scalar normalized_mse(const FeatureMap<Scalar> &a, const FeatureMap<Scalar> &b) {
  if (!a.same_shape(b))
    throw ShapeError("normalized_mse: shape mismatch");
  return (a.data - b.data).squaredNorm() / Scalar(a.size());
}

/**
 * Semantic alignment loss: mean over the selected levels of the MSE between
 * standardized teacher and (already projected) student features.
 */
template <typename Scalar>
Scalar sfa_loss(const FeaturePyramid<Scalar> &teacher, const FeaturePyramid<Scalar> &student,
                const std::set<int> &levels, bool per_channel = false) {
  if (teacher.size() != student.size())
    throw ShapeError("sfa_loss: pyramid length mismatch");
  if (levels.empty())
    throw std::invalid_argument("sfa_loss: level set is empty");
  Scalar total = 0;
  for (int l : levels) {
    if (l < 0 || l >= static_cast<int>(teacher.size()))
      throw std::out_of_range("sfa_loss: level id " + std::to_string(l) + " out of range");
    const auto &t = teacher[l];
    const auto &s = student[l];
    if (!t.same_shape(s))
      throw ShapeError("sfa_loss: level " + std::to_string(l) + " shape mismatch");
    if (per_channel)
      total += normalized_mse(standardize_per_channel(t).data, standardize_per_channel(s).data);
    else
      total += normalized_mse(standardize(t).data, standardize(s).data);
  }
  return total / Scalar(levels.size());
}

} // namespace dfmsd
