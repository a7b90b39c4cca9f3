#include "dfmsd/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dfmsd {

namespace {

constexpr double kFocalAlpha = 0.25;
constexpr double kFocalGamma = 2.0;
constexpr double kClassPrior = 0.01;
constexpr double kMaxLogScale = 6.0;

nn::Var image_to_var(const Image &image) {
  return nn::Var::constant((image.data.array() - 0.5).matrix() * 4.0, nn::Shape{3, image.height, image.width});
}

} // namespace

Detector::Detector(const TinyDetectorSpec &spec, std::uint64_t seed) : spec_(spec) {
  const auto problems = spec.violations("detector");
  if (!problems.empty())
    throw std::invalid_argument(problems.front());
  Rng rng(derive_seed(seed, {0xde7ec7ULL}));
  const int stages = spec_.num_backbone_stages();
  int in = 3;
  for (int s = 0; s < stages; ++s) {
    const int out = spec_.stage_channels(s);
    const std::string name = "backbone.s" + std::to_string(s);
    downsample_.emplace_back(name + ".down", in, out, nn::ConvGeometry{3, 2, 1}, rng);
    extra_.emplace_back();
    const int depth = spec_.depth.empty() ? 0 : spec_.depth[s];
    for (int d = 0; d < depth; ++d)
      extra_.back().emplace_back(name + ".conv" + std::to_string(d), out, out, nn::ConvGeometry{3, 1, 1}, rng);
    in = out;
  }
  const int f = spec_.pyramid_channels();
  for (int l = 0; l < spec_.fpn_levels; ++l) {
    const std::string name = "fpn.l" + std::to_string(l);
    lateral_.emplace_back(name + ".lateral", spec_.stage_channels(l + 2), f, nn::ConvGeometry{1, 1, 0}, rng);
    smooth_.emplace_back(name + ".smooth", f, f, nn::ConvGeometry{3, 1, 1}, rng);
  }
  tower_ = nn::Conv2d("head.tower", f, f, {3, 1, 1}, rng);
  cls_head_ = nn::Conv2d("head.cls", f, spec_.num_classes, {3, 1, 1}, rng);
  box_head_ = nn::Conv2d("head.box", f, 4, {3, 1, 1}, rng);

  // small-weight heads with a rare-positive prior keep early focal loss stable
  cls_head_.weight().var.mutable_value() *= 0.1;
  cls_head_.bias().var.mutable_value().setConstant(-std::log((1.0 - kClassPrior) / kClassPrior));
  box_head_.weight().var.mutable_value() *= 0.1;
}

DetectorOutput Detector::forward(const Image &image) const {
  if (image.height != spec_.image_size || image.width != spec_.image_size)
    throw ShapeError("Detector::forward: expected a " + std::to_string(spec_.image_size) + "x" +
                     std::to_string(spec_.image_size) + " image");
  std::vector<nn::Var> stage_out;
  nn::Var x = image_to_var(image);
  for (std::size_t s = 0; s < downsample_.size(); ++s) {
    x = nn::relu(downsample_[s](x));
    for (const auto &conv : extra_[s])
      x = nn::relu(conv(x));
    stage_out.push_back(x);
  }

  const int levels = spec_.fpn_levels;
  std::vector<nn::Var> merged(levels);
  for (int l = levels - 1; l >= 0; --l) {
    nn::Var lat = lateral_[l](stage_out[l + 2]);
    merged[l] = l == levels - 1 ? lat : nn::add(lat, nn::upsample_nearest(merged[l + 1], lat.shape()));
  }

  DetectorOutput out;
  for (int l = 0; l < levels; ++l) {
    nn::Var p = smooth_[l](merged[l]);
    nn::Var t = nn::relu(tower_(p));
    out.pyramid.push_back(p);
    out.cls_logits.push_back(cls_head_(t));
    out.box_deltas.push_back(box_head_(t));
  }
  return out;
}

FeaturePyramidd Detector::extract_pyramid(const Image &image) const {
  const DetectorOutput out = forward(image);
  FeaturePyramidd pyr;
  for (std::size_t l = 0; l < out.pyramid.size(); ++l) {
    const nn::Shape s = out.pyramid[l].shape();
    pyr.levels.emplace_back(out.pyramid[l].value(), s.channels, s.height, s.width, static_cast<int>(l));
  }
  return pyr;
}

int Detector::assign_level(const Box &box) const {
  const double side = std::sqrt(std::max(box.area(), 1e-12)) * spec_.image_size;
  int best = 0;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int l = 0; l < spec_.fpn_levels; ++l) {
    const double gap = std::abs(std::log2(side / anchor_side(l)));
    if (gap < best_gap) {
      best_gap = gap;
      best = l;
    }
  }
  return best;
}

std::vector<LevelTargets> Detector::build_targets(const BoxSet &gt) const {
  const int levels = spec_.fpn_levels;
  const double img = spec_.image_size;
  std::vector<LevelTargets> targets(levels);
  std::vector<std::vector<double>> owner_area(levels);
  for (int l = 0; l < levels; ++l) {
    const int n = spec_.level_size(l);
    targets[l].classes = Eigen::MatrixXd::Zero(spec_.num_classes, n * n);
    targets[l].deltas = Eigen::MatrixXd::Zero(4, n * n);
    targets[l].weights = Eigen::MatrixXd::Zero(4, n * n);
    owner_area[l].assign(static_cast<std::size_t>(n * n), std::numeric_limits<double>::infinity());
  }

  for (std::size_t i = 0; i < gt.size(); ++i) {
    const Box &b = gt.boxes[i];
    const int label = std::clamp(gt.label(i), 0, spec_.num_classes - 1);
    const int l = assign_level(b);
    const int n = spec_.level_size(l);
    const double stride = spec_.level_stride(l);
    const double cx = 0.5 * (b.x_min + b.x_max), cy = 0.5 * (b.y_min + b.y_max);
    const int ci = std::clamp(static_cast<int>(cy * n), 0, n - 1);
    const int cj = std::clamp(static_cast<int>(cx * n), 0, n - 1);
    for (int di = -1; di <= 1; ++di)
      for (int dj = -1; dj <= 1; ++dj) {
        const int gi = ci + di, gj = cj + dj;
        if (gi < 0 || gj < 0 || gi >= n || gj >= n)
          continue;
        const double ccx = (gj + 0.5) / n, ccy = (gi + 0.5) / n;
        const bool inside = ccx > b.x_min && ccx < b.x_max && ccy > b.y_min && ccy < b.y_max;
        if (!(di == 0 && dj == 0) && !inside)
          continue;
        const int cell = gi * n + gj;
        if (b.area() >= owner_area[l][static_cast<std::size_t>(cell)])
          continue;
        owner_area[l][static_cast<std::size_t>(cell)] = b.area();

        auto &t = targets[l];
        t.classes.col(cell).setZero();
        t.classes(label, cell) = 1.0;
        t.weights.col(cell).setOnes();
        const double px = ccx * img, py = ccy * img;
        if (spec_.head == HeadStyle::anchor_based) {
          const double a = anchor_side(l);
          t.deltas(0, cell) = (cx * img - px) / a;
          t.deltas(1, cell) = (cy * img - py) / a;
          t.deltas(2, cell) = std::log(b.width() * img / a);
          t.deltas(3, cell) = std::log(b.height() * img / a);
        } else {
          const double d[4] = {px - b.x_min * img, py - b.y_min * img, b.x_max * img - px, b.y_max * img - py};
          for (int k = 0; k < 4; ++k)
            t.deltas(k, cell) = std::log(std::max(d[k], 0.5) / stride);
        }
      }
  }
  for (auto &t : targets)
    t.positives = static_cast<int>(t.weights.row(0).sum() + 0.5);
  return targets;
}

DetectionLoss Detector::gt_loss(const DetectorOutput &out, const BoxSet &gt) const {
  const auto targets = build_targets(gt);
  int positives = 0;
  for (const auto &t : targets)
    positives += t.positives;
  const double norm = std::max(1, positives);

  DetectionLoss loss;
  loss.positives = positives;
  nn::Var total;
  for (std::size_t l = 0; l < targets.size(); ++l) {
    nn::Var cls = nn::sigmoid_focal_loss(out.cls_logits[l], targets[l].classes, kFocalAlpha, kFocalGamma, norm);
    nn::Var reg = nn::weighted_l1(out.box_deltas[l], targets[l].deltas, targets[l].weights, norm);
    loss.classification += cls.item();
    loss.regression += reg.item();
    nn::Var level = nn::add(cls, reg);
    total = total.defined() ? nn::add(total, level) : level;
  }
  loss.total = total;
  return loss;
}

BoxSet Detector::decode(const DetectorOutput &out, double score_thresh, int max_detections) const {
  const double img = spec_.image_size;
  BoxSet candidates;
  candidates.image_height = candidates.image_width = spec_.image_size;
  for (int l = 0; l < spec_.fpn_levels; ++l) {
    const int n = spec_.level_size(l);
    const double stride = spec_.level_stride(l);
    const auto &logits = out.cls_logits[l].value();
    const auto &deltas = out.box_deltas[l].value();
    for (int cell = 0; cell < n * n; ++cell) {
      const double px = ((cell % n) + 0.5) / n * img, py = ((cell / n) + 0.5) / n * img;
      Box box;
      bool decoded = false;
      for (int k = 0; k < spec_.num_classes; ++k) {
        const double score = 1.0 / (1.0 + std::exp(-logits(k, cell)));
        if (score < score_thresh)
          continue;
        if (!decoded) {
          auto ex = [](double v) { return std::exp(std::clamp(v, -kMaxLogScale, kMaxLogScale)); };
          double x0, y0, x1, y1;
          if (spec_.head == HeadStyle::anchor_based) {
            const double a = anchor_side(l);
            const double cx = px + deltas(0, cell) * a, cy = py + deltas(1, cell) * a;
            const double w = a * ex(deltas(2, cell)), h = a * ex(deltas(3, cell));
            x0 = cx - w / 2, y0 = cy - h / 2, x1 = cx + w / 2, y1 = cy + h / 2;
          } else {
            x0 = px - stride * ex(deltas(0, cell));
            y0 = py - stride * ex(deltas(1, cell));
            x1 = px + stride * ex(deltas(2, cell));
            y1 = py + stride * ex(deltas(3, cell));
          }
          box = {std::clamp(x0 / img, 0.0, 1.0), std::clamp(y0 / img, 0.0, 1.0), std::clamp(x1 / img, 0.0, 1.0),
                 std::clamp(y1 / img, 0.0, 1.0)};
          decoded = true;
        }
        if (box.x_max > box.x_min && box.y_max > box.y_min)
          candidates.add(box, score, k);
      }
    }
  }
  return non_max_suppression(candidates, 0.5, max_detections);
}

BoxSet Detector::predict(const Image &image, double score_thresh, int max_detections) const {
  return decode(forward(image), score_thresh, max_detections);
}

nn::ParameterList Detector::parameters() {
  nn::ParameterList out;
  for (std::size_t s = 0; s < downsample_.size(); ++s) {
    downsample_[s].collect(out);
    for (auto &conv : extra_[s])
      conv.collect(out);
  }
  for (std::size_t l = 0; l < lateral_.size(); ++l) {
    lateral_[l].collect(out);
    smooth_[l].collect(out);
  }
  tower_.collect(out);
  cls_head_.collect(out);
  box_head_.collect(out);
  return out;
}

std::size_t Detector::parameter_count() { return nn::parameter_count(parameters()); }

std::uint64_t Detector::checksum() { return nn::checksum(parameters()); }

void Detector::set_frozen(bool frozen) { nn::set_requires_grad(parameters(), !frozen); }

BoxSet non_max_suppression(const BoxSet &candidates, double iou_thresh, int max_detections) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return candidates.scores[a] > candidates.scores[b]; });
  BoxSet kept;
  kept.image_height = candidates.image_height;
  kept.image_width = candidates.image_width;
  for (std::size_t i : order) {
    if (static_cast<int>(kept.size()) >= max_detections)
      break;
    bool suppressed = false;
    for (std::size_t j = 0; j < kept.size() && !suppressed; ++j)
      suppressed = kept.label(j) == candidates.label(i) && iou(kept.boxes[j], candidates.boxes[i]) > iou_thresh;
    if (!suppressed)
      kept.add(candidates.boxes[i], candidates.scores[i], candidates.label(i));
  }
  return kept;
}

} // namespace dfmsd
