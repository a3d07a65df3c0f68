#include "dabf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace dabf {

namespace {

struct Match {
  int tp = 0, fp = 0;  // per detection, in ranked order
};

// TP/FP flags for one class at one IoU threshold, detections ranked by
// confidence (ties by input order).
std::vector<char> match_class(const std::vector<const Detection*>& ranked,
                              const std::vector<std::vector<GroundTruth>>& gts, int class_id,
                              double thresh, int* num_gt_out) {
  int num_images = static_cast<int>(gts.size());
  std::vector<std::vector<bool>> used(static_cast<size_t>(num_images));
  int num_gt = 0;
  for (int i = 0; i < num_images; ++i) {
    used[static_cast<size_t>(i)].assign(gts[static_cast<size_t>(i)].size(), false);
    for (const GroundTruth& g : gts[static_cast<size_t>(i)]) num_gt += g.class_id == class_id;
  }
  std::vector<char> tp(ranked.size(), 0);
  for (size_t d = 0; d < ranked.size(); ++d) {
    const Detection& det = *ranked[d];
    if (det.image_index < 0 || det.image_index >= num_images) continue;
    const auto& img_gts = gts[static_cast<size_t>(det.image_index)];
    double best = 0.0;
    int best_g = -1;
    for (size_t g = 0; g < img_gts.size(); ++g) {
      if (img_gts[g].class_id != class_id || used[static_cast<size_t>(det.image_index)][g]) continue;
      double v = iou_of(det.box, img_gts[g].box);
      if (v >= thresh && v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0) {
      used[static_cast<size_t>(det.image_index)][static_cast<size_t>(best_g)] = true;
      tp[d] = 1;
    }
  }
  if (num_gt_out) *num_gt_out = num_gt;
  return tp;
}

double ap_101(const std::vector<char>& tp, int num_gt) {
  if (num_gt == 0) return 0.0;
  std::vector<double> precision(tp.size()), recall(tp.size());
  int cum_tp = 0;
  for (size_t i = 0; i < tp.size(); ++i) {
    cum_tp += tp[i];
    precision[i] = static_cast<double>(cum_tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(cum_tp) / static_cast<double>(num_gt);
  }
  double ap = 0.0;
  for (int r = 0; r <= 100; ++r) {
    double level = r / 100.0;
    double best = 0.0;
    for (size_t i = 0; i < tp.size(); ++i) {
      if (recall[i] >= level - 1e-12) best = std::max(best, precision[i]);
    }
    ap += best;
  }
  return ap / 101.0;
}

}  // namespace

EvalResult evaluate(const std::vector<Detection>& detections,
                    const std::vector<std::vector<GroundTruth>>& gts_per_image, int num_classes) {
  EvalResult out;
  out.ap50_per_class.assign(static_cast<size_t>(num_classes), 0.0);

  // Content-based ranking: confidence first, then a canonical key, so the
  // metrics do not depend on the order the caller supplies records in.
  std::vector<size_t> order(detections.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const Detection &da = detections[a], &db = detections[b];
    auto key = [](const Detection& d) {
      return std::make_tuple(-d.confidence, d.image_index, d.class_id, d.box.cx, d.box.cy, d.box.w,
                             d.box.h);
    };
    return key(da) < key(db);
  });

  std::vector<std::vector<const Detection*>> ranked(static_cast<size_t>(num_classes));
  for (size_t oi : order) {
    const Detection& d = detections[oi];
    if (d.class_id >= 0 && d.class_id < num_classes) {
      ranked[static_cast<size_t>(d.class_id)].push_back(&d);
    }
  }

  int total_gt = 0;
  for (const auto& img : gts_per_image) total_gt += static_cast<int>(img.size());

  double map50 = 0.0, map_all = 0.0;
  int classes_with_gt = 0;
  int tp50_total = 0;
  for (int c = 0; c < num_classes; ++c) {
    int num_gt = 0;
    std::vector<char> tp50 = match_class(ranked[static_cast<size_t>(c)], gts_per_image, c, 0.5, &num_gt);
    for (char t : tp50) tp50_total += t;
    if (num_gt == 0) continue;
    ++classes_with_gt;
    double ap50 = ap_101(tp50, num_gt);
    out.ap50_per_class[static_cast<size_t>(c)] = ap50;
    map50 += ap50;
    double sum_t = 0.0;
    for (int t = 0; t < 10; ++t) {
      double thresh = 0.5 + 0.05 * t;
      std::vector<char> tp = match_class(ranked[static_cast<size_t>(c)], gts_per_image, c, thresh, nullptr);
      sum_t += ap_101(tp, num_gt);
    }
    map_all += sum_t / 10.0;
  }
  if (classes_with_gt > 0) {
    out.map50 = map50 / classes_with_gt;
    out.map5095 = map_all / classes_with_gt;
  }
  out.precision = detections.empty() ? 0.0
                                     : static_cast<double>(tp50_total) /
                                           static_cast<double>(detections.size());
  out.recall = total_gt == 0 ? 0.0 : static_cast<double>(tp50_total) / static_cast<double>(total_gt);
  return out;
}

}  // namespace dabf
