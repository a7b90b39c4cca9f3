#pragma once

#include "dfmsd/detector_spec.hpp"
#include "dfmsd/nn/modules.hpp"
#include "dfmsd/types.hpp"

#include <cstdint>
#include <vector>

namespace dfmsd {

/// Per-level outputs of one forward pass. All entries are C x (H*W) Vars.
struct DetectorOutput {
  std::vector<nn::Var> pyramid;
  std::vector<nn::Var> cls_logits; ///< num_classes rows
  std::vector<nn::Var> box_deltas; ///< 4 rows
};

struct DetectionLoss {
  nn::Var total;
  double classification = 0;
  double regression = 0;
  int positives = 0;
};

/// Dense per-level training targets for one image.
struct LevelTargets {
  Eigen::MatrixXd classes; ///< num_classes x (H*W), one-hot at positives
  Eigen::MatrixXd deltas;  ///< 4 x (H*W)
  Eigen::MatrixXd weights; ///< 4 x (H*W), 1 at positives
  int positives = 0;
};

/**
 * Tiny one-stage detector: strided conv backbone, top-down FPN, and a head
 * shared across levels. Anchor-based heads regress (dx, dy, log w, log h)
 * against one square anchor of side 2*stride per cell; anchor-free heads
 * regress log distances (l, t, r, b) from the cell center in stride units.
 *
 * Parameters are owned by the detector and shared by copies of its Vars, so
 * the type is move-only.
 */
class Detector {
public:
  Detector(const TinyDetectorSpec &spec, std::uint64_t seed);
  Detector(const Detector &) = delete;
  Detector &operator=(const Detector &) = delete;
  Detector(Detector &&) = default;
  Detector &operator=(Detector &&) = default;

  const TinyDetectorSpec &spec() const { return spec_; }

  DetectorOutput forward(const Image &image) const;
  FeaturePyramidd extract_pyramid(const Image &image) const;

  BoxSet predict(const Image &image, double score_thresh = 0.05, int max_detections = 100) const;
  BoxSet decode(const DetectorOutput &out, double score_thresh = 0.05, int max_detections = 100) const;

  std::vector<LevelTargets> build_targets(const BoxSet &ground_truth) const;
  DetectionLoss gt_loss(const DetectorOutput &out, const BoxSet &ground_truth) const;

  /// Stable order; names are unique.
  nn::ParameterList parameters();
  std::size_t parameter_count();
  std::uint64_t checksum();
  /// Frozen detectors record no graph.
  void set_frozen(bool frozen);

private:
  double anchor_side(int level) const { return 2.0 * spec_.level_stride(level); }
  int assign_level(const Box &box) const;

  TinyDetectorSpec spec_;
  std::vector<nn::Conv2d> downsample_;
  std::vector<std::vector<nn::Conv2d>> extra_;
  std::vector<nn::Conv2d> lateral_;
  std::vector<nn::Conv2d> smooth_;
  nn::Conv2d tower_, cls_head_, box_head_;
};

/// Class-wise greedy non-maximum suppression, highest score first.
BoxSet non_max_suppression(const BoxSet &candidates, double iou_thresh, int max_detections);

} // namespace dfmsd
