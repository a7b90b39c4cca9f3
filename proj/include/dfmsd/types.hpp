#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmsd {

/// Thrown when two operands disagree on channel or spatial extents.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a loss or activation leaves the finite range.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/**
 * One level of a feature pyramid, C x H x W.
 *
 * Storage is a C x (H*W) matrix so that per-channel reductions are row-wise
 * and per-position reductions are column-wise. Column index is h*W + w.
 */
template <typename Scalar> struct FeatureMap {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  int level_id = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix data;

  FeatureMap() = default;

  FeatureMap(int c, int h, int w, int level = 0)
      : level_id(level), channels(c), height(h), width(w), data(Matrix::Zero(c, h * w)) {
    if (c < 1 || h < 1 || w < 1)
      throw ShapeError("FeatureMap requires C, H, W >= 1");
  }

  FeatureMap(Matrix values, int c, int h, int w, int level = 0)
      : level_id(level), channels(c), height(h), width(w), data(std::move(values)) {
    if (c < 1 || h < 1 || w < 1)
      throw ShapeError("FeatureMap requires C, H, W >= 1");
    if (data.rows() != c || data.cols() != static_cast<Eigen::Index>(h) * w)
      throw ShapeError("FeatureMap storage does not match C x (H*W)");
  }

  Scalar &at(int c, int h, int w) { return data(c, h * width + w); }
  Scalar at(int c, int h, int w) const { return data(c, h * width + w); }

  Eigen::Index size() const { return data.size(); }
  int spatial() const { return height * width; }

  bool same_shape(const FeatureMap &other) const {
    return channels == other.channels && height == other.height && width == other.width;
  }

  bool all_finite() const { return data.allFinite(); }

  /// Throws NumericError on NaN/Inf entries.
  void require_finite(const char *what) const {
    if (!all_finite())
      throw NumericError(std::string(what) + ": non-finite feature entries");
  }

  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> flat() const {
    return {data.data(), data.size()};
  }

  template <typename Other> FeatureMap<Other> cast() const {
    return FeatureMap<Other>(data.template cast<Other>(), channels, height, width, level_id);
  }
};

enum class PyramidSource { teacher, student };

template <typename Scalar> struct FeaturePyramid {
  std::vector<FeatureMap<Scalar>> levels;
  PyramidSource source = PyramidSource::student;

  std::size_t size() const { return levels.size(); }
  const FeatureMap<Scalar> &operator[](std::size_t i) const { return levels[i]; }
  FeatureMap<Scalar> &operator[](std::size_t i) { return levels[i]; }

  /// Level ids 0..L-1 in order, spatial extent non-increasing, entries finite.
  void validate() const {
    if (levels.empty())
      throw ShapeError("FeaturePyramid requires at least one level");
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (levels[l].level_id != static_cast<int>(l))
        throw ShapeError("FeaturePyramid level ids must be 0..L-1 in order");
      if (l > 0 && (levels[l].height > levels[l - 1].height || levels[l].width > levels[l - 1].width))
        throw ShapeError("FeaturePyramid spatial sizes must not grow with level id");
      levels[l].require_finite("FeaturePyramid");
    }
  }
};

using FeatureMapd = FeatureMap<double>;
using FeaturePyramidd = FeaturePyramid<double>;

/// Axis-aligned box in normalized [0,1] image coordinates.
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool operator==(const Box &) const = default;
};

/**
 * Scored (or ground-truth) boxes for one image.
 *
 * `labels` is either empty (class-agnostic) or parallel to `boxes`.
 */
struct BoxSet {
  std::vector<Box> boxes;
  std::vector<double> scores;
  std::vector<int> labels;
  int image_height = 0;
  int image_width = 0;

  std::size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }
  int label(std::size_t i) const { return labels.empty() ? 0 : labels[i]; }

  void add(const Box &b, double score, int label = 0) {
    boxes.push_back(b);
    scores.push_back(score);
    labels.push_back(label);
  }

  /// Throws std::invalid_argument listing the first violated invariant.
  void validate() const;
};

double iou(const Box &a, const Box &b);

/**
 * RGB image with intensities in [0,1], stored 3 x (H*W) like FeatureMap.
 */
struct Image {
  int height = 0;
  int width = 0;
  Eigen::MatrixXd data;

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(Eigen::MatrixXd::Zero(3, h * w)) {}

  double &at(int c, int h, int w) { return data(c, h * width + w); }
  double at(int c, int h, int w) const { return data(c, h * width + w); }

  /// Luminance with 0.299/0.587/0.114 weights, returned as H x W.
  Eigen::MatrixXd gray() const;

  bool operator==(const Image &o) const {
    return height == o.height && width == o.width && data == o.data;
  }
};

} // namespace dfmsd
