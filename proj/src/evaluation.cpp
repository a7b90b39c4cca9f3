#include "dfmsd/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

namespace dfmsd {

namespace {

struct Detection {
  double score;
  std::size_t image;
  std::size_t index;
};

/// Indices of an image's detections of class `label`, best `limit` by score.
std::vector<std::size_t> top_detections(const BoxSet &preds, int label, int limit) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds.label(i) == label)
      idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return preds.scores[a] > preds.scores[b]; });
  if (static_cast<int>(idx.size()) > limit)
    idx.resize(static_cast<std::size_t>(limit));
  return idx;
}

} // namespace

EvalResult evaluate_ap(const std::vector<BoxSet> &predictions, const std::vector<BoxSet> &ground_truth,
                       double iou_thresh, int max_detections) {
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0))
    throw std::invalid_argument("evaluate_ap: iou_thresh must lie in (0,1)");
  if (predictions.size() != ground_truth.size())
    throw std::invalid_argument("evaluate_ap: predictions and ground truth differ in image count");

  std::set<int> classes;
  for (const auto &gt : ground_truth)
    for (std::size_t i = 0; i < gt.size(); ++i)
      classes.insert(gt.label(i));
  if (classes.empty())
    return {};

  double ap_sum = 0.0, recall_sum = 0.0;
  for (int label : classes) {
    std::size_t num_gt = 0;
    std::vector<Detection> dets;
    for (std::size_t img = 0; img < ground_truth.size(); ++img) {
      for (std::size_t i = 0; i < ground_truth[img].size(); ++i)
        num_gt += ground_truth[img].label(i) == label;
      for (std::size_t i : top_detections(predictions[img], label, max_detections))
        dets.push_back({predictions[img].scores[i], img, i});
    }
    std::stable_sort(dets.begin(), dets.end(), [](const Detection &a, const Detection &b) { return a.score > b.score; });

    std::vector<std::vector<bool>> matched(ground_truth.size());
    for (std::size_t img = 0; img < ground_truth.size(); ++img)
      matched[img].assign(ground_truth[img].size(), false);

    std::vector<double> precision, recall;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < dets.size(); ++k) {
      const Detection &d = dets[k];
      const BoxSet &gt = ground_truth[d.image];
      const Box &pb = predictions[d.image].boxes[d.index];
      double best = iou_thresh;
      std::ptrdiff_t best_j = -1;
      for (std::size_t j = 0; j < gt.size(); ++j) {
        if (gt.label(j) != label || matched[d.image][j])
          continue;
        const double o = iou(pb, gt.boxes[j]);
        if (o >= best) {
          best = o;
          best_j = static_cast<std::ptrdiff_t>(j);
        }
      }
      if (best_j >= 0) {
        matched[d.image][static_cast<std::size_t>(best_j)] = true;
        ++tp;
      }
      precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
      recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
    }

    // precision envelope, then area under the staircase
    for (std::size_t k = precision.size(); k-- > 1;)
      precision[k - 1] = std::max(precision[k - 1], precision[k]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < precision.size(); ++k) {
      ap += (recall[k] - prev_recall) * precision[k];
      prev_recall = recall[k];
    }
    ap_sum += ap;
    recall_sum += static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  const double n = static_cast<double>(classes.size());
  return {ap_sum / n, recall_sum / n};
}

} // namespace dfmsd
