#pragma once

#include "dfmsd/types.hpp"

#include <vector>

namespace dfmsd {

struct EvalResult {
  double ap50 = 0; ///< mean over classes with ground truth of the all-point interpolated AP
  double mar = 0;  ///< mean over the same classes of recall with at most 100 detections per image
};

/**
 * Greedy score-descending matching at IoU >= iou_thresh, one match per
 * ground-truth box, evaluated per class. AP is the area under the
 * precision envelope of the exact PR staircase.
 */
EvalResult evaluate_ap(const std::vector<BoxSet> &predictions, const std::vector<BoxSet> &ground_truth,
                       double iou_thresh = 0.5, int max_detections = 100);

} // namespace dfmsd
