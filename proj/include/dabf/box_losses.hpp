#pragma once

#include <string>
#include <vector>

#include "dabf/tensor.hpp"

namespace dabf {

/// Axis-aligned box, center + extents, image units. Extents must stay
/// strictly positive.
struct BBox {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x1() const { return cx - w / 2; }
  double y1() const { return cy - h / 2; }
  double x2() const { return cx + w / 2; }
  double y2() const { return cy + h / 2; }
  double area() const { return w * h; }

  static BBox from_corners(double x1, double y1, double x2, double y2) {
    return BBox{(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
  }
};

struct EnclosureGeometry {
  double iou = 0;
  double intersection = 0;
  double union_area = 0;
  double enclose_w = 0;   // W_g
  double enclose_h = 0;   // H_g
  double enclose_area = 0;
  double center_dist2 = 0;
};

/// Exact analytic geometry, plain doubles (evaluation / NMS path).
EnclosureGeometry iou_geometry(const BBox& pred, const BBox& gt);
double iou_of(const BBox& a, const BBox& b);

/// Same geometry on the graph, differentiable w.r.t. pred = [cx,cy,w,h].
struct GeometryT {
  Tensor iou;
  Tensor intersection;
  Tensor union_area;
  Tensor enclose_w;
  Tensor enclose_h;
  Tensor enclose_area;
  Tensor center_dist2;
};
GeometryT iou_geometry_t(const Tensor& pred, const BBox& gt);

/// Counts 1/grid subcells covered by each box and both boxes. Exact for
/// boxes whose coordinates are integer multiples of 1/grid; independent
/// of the analytic path.
double rasterized_iou_oracle(const BBox& a, const BBox& b, int grid);

enum class BoxLossVariant { kIou, kGiou, kDiou, kCiou, kEiou, kSiou, kWiou1, kWiou2, kWiou3 };

BoxLossVariant parse_box_loss(const std::string& name);  // iou|giou|...|wiou3
std::string box_loss_name(BoxLossVariant v);
const std::vector<BoxLossVariant>& all_box_loss_variants();

/// Selected variant plus the running statistics the focusing variants
/// need. The running mean tracks detached per-box IoU loss and moves only
/// in training mode.
struct BoxLossState {
  BoxLossVariant variant = BoxLossVariant::kCiou;
  double running_mean_liou = 1.0;
  double momentum = 0.01;
  double v2_gamma = 0.5;
  double v3_alpha = 1.9;
  double v3_delta = 3.0;
  bool training = false;
};

/// Values the loss treats as constants during backward: the enclosure
/// diagonal of the wiou family, the focusing factors of wiou2/3 and the
/// ciou trade-off coefficient. Capturing them at a base point and passing
/// them back in makes the partially-frozen function explicit, which is
/// exactly what central differences must probe.
struct DetachAnchor {
  double wiou_diag2 = 0.0;
  double v2_factor = 1.0;
  double v3_gain = 1.0;
  double ciou_alpha = 0.0;
};

/// Scalar loss for one (pred, gt) pair; pred is a length-4 tensor
/// [cx, cy, w, h]. The enclosure-diagonal denominator of the wiou family
/// and the focusing factors are gradient-detached. `capture`, when given,
/// receives the detached values computed at this pred; `use`, when given,
/// substitutes previously captured ones (frozen evaluation).
Tensor box_loss(const Tensor& pred, const BBox& gt, const BoxLossState& state,
                DetachAnchor* capture = nullptr, const DetachAnchor* use = nullptr);

/// running_mean <- (1-m)*running_mean + m*mean(batch). Rejected outside
/// training mode.
void update_state(BoxLossState& state, const std::vector<double>& detached_liou_batch);

/// Non-monotonic gain r(beta) = beta / (delta * alpha^(beta-delta)).
double wiou_v3_gain(double beta, double alpha, double delta);

}  // namespace dabf
