#include "dfmsd/detector_spec.hpp"
#include "dfmsd/types.hpp"

#include <algorithm>
#include <cmath>

namespace dfmsd {

void BoxSet::validate() const {
  if (boxes.size() != scores.size())
    throw std::invalid_argument("BoxSet: boxes and scores differ in length");
  if (!labels.empty() && labels.size() != boxes.size())
    throw std::invalid_argument("BoxSet: labels and boxes differ in length");
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Box &b = boxes[i];
    if (!(b.x_min < b.x_max && b.y_min < b.y_max))
      throw std::invalid_argument("BoxSet: box " + std::to_string(i) + " has non-positive extent");
    if (!(scores[i] >= 0.0 && scores[i] <= 1.0))
      throw std::invalid_argument("BoxSet: score " + std::to_string(i) + " outside [0,1]");
  }
}

double iou(const Box &a, const Box &b) {
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

Eigen::MatrixXd Image::gray() const {
  Eigen::MatrixXd g(height, width);
  for (int h = 0; h < height; ++h)
    for (int w = 0; w < width; ++w)
      g(h, w) = 0.299 * at(0, h, w) + 0.587 * at(1, h, w) + 0.114 * at(2, h, w);
  return g;
}

std::string to_string(HeadStyle style) {
  return style == HeadStyle::anchor_free ? "anchor_free" : "anchor_based";
}

HeadStyle head_style_from_string(const std::string &name) {
  if (name == "anchor_free")
    return HeadStyle::anchor_free;
  if (name == "anchor_based")
    return HeadStyle::anchor_based;
  throw std::invalid_argument("unknown head style '" + name + "'");
}

int TinyDetectorSpec::stage_channels(int stage) const {
  // 1, 2, 4, 4, 4, ... times the base width
  const int factor = std::min(1 << stage, 4);
  return std::max(1, static_cast<int>(std::lround(base_channels * width_multiplier * factor)));
}

int TinyDetectorSpec::pyramid_channels() const {
  return std::max(1, static_cast<int>(std::lround(fpn_channels * width_multiplier)));
}

std::vector<std::string> TinyDetectorSpec::violations(const std::string &prefix) const {
  std::vector<std::string> v;
  if (!(width_multiplier > 0))
    v.push_back(prefix + ".width_multiplier must be > 0");
  if (fpn_levels < 1 || fpn_levels > 4)
    v.push_back(prefix + ".fpn_levels must be in [1,4]");
  if (num_classes < 1)
    v.push_back(prefix + ".num_classes must be >= 1");
  if (base_channels < 1)
    v.push_back(prefix + ".base_channels must be >= 1");
  if (fpn_channels < 1)
    v.push_back(prefix + ".fpn_channels must be >= 1");
  if (fpn_levels >= 1 && fpn_levels <= 4) {
    const int coarsest = 1 << (2 + fpn_levels);
    if (image_size < coarsest || image_size % coarsest != 0)
      v.push_back(prefix + ".image_size must be a positive multiple of " + std::to_string(coarsest));
    if (!depth.empty() && static_cast<int>(depth.size()) != num_backbone_stages())
      v.push_back(prefix + ".depth must list " + std::to_string(num_backbone_stages()) +
                  " stage counts");
  }
  for (int d : depth)
    if (d < 0)
      v.push_back(prefix + ".depth entries must be >= 0");
  return v;
}

} // namespace dfmsd
