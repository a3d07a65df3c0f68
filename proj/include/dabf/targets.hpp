#pragma once

#include <array>
#include <vector>

#include "dabf/box_losses.hpp"
#include "dabf/tensor.hpp"

namespace dabf {

struct GroundTruth {
  int class_id = 0;  // 0 = hat, 1 = person
  BBox box;
};

struct Detection {
  int class_id = 0;
  BBox box;
  double confidence = 0.0;
  int image_index = -1;
};

/// Level whose size band covers max(w,h). Bands are
/// (base*s_{l-1}/8, base*s_l/8] with the last level open-ended; base is
/// config-exposed (default 16, i.e. cutoff 2*stride).
int assign_level(double max_wh, const std::vector<int>& strides, double cutoff_base);

struct PositiveCell {
  int level = 0, cy = 0, cx = 0;
  int gt_index = 0;
  int class_id = 0;
  std::array<double, 4> ltrb{};  // distances from cell center, image units
};

struct AssignResult {
  std::vector<PositiveCell> positives;
  std::vector<std::vector<double>> cls_targets;  // per level, nc*H*W of {0,1}
  std::vector<int> dropped_gts;                  // displaced by same-cell collisions
};

/// One positive cell per ground truth: the level from the size band, the
/// cell containing the center (floor rule, so an exact boundary belongs
/// to the cell starting there). The first ground truth keeps a contested
/// cell. Centers outside the image are rejected.
AssignResult assign(const std::vector<GroundTruth>& gts, const std::vector<int>& strides,
                    int image_size, int num_classes);
AssignResult assign(const std::vector<GroundTruth>& gts, const std::vector<int>& strides,
                    int image_size, int num_classes, double cutoff_base);

/// Raw network maps to decoded space: ltrb channels through
/// softplus * stride, class channels through sigmoid. Plain values.
std::vector<Tensor> activate_maps(const std::vector<Tensor>& raw_maps,
                                  const std::vector<int>& strides);

/// Decoded-space maps from assignment targets (confidence 1 at positive
/// cells); decoding these reproduces the ground truth exactly.
std::vector<Tensor> targets_to_maps(const AssignResult& ar, const std::vector<int>& strides,
                                    int image_size, int num_classes);

/// Cells above conf_thresh decode ltrb around their cell center, then
/// greedy class-wise suppression (IoU strictly above nms_iou drops the
/// lower-confidence box). Ties rank by insertion index.
std::vector<Detection> decode_and_nms(const std::vector<Tensor>& decoded_maps,
                                      const std::vector<int>& strides, double conf_thresh,
                                      double nms_iou);

}  // namespace dabf
