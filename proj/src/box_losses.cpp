#include "dabf/box_losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dabf/ops.hpp"

namespace dabf {

EnclosureGeometry iou_geometry(const BBox& pred, const BBox& gt) {
  EnclosureGeometry g;
  double ix = std::min(pred.x2(), gt.x2()) - std::max(pred.x1(), gt.x1());
  double iy = std::min(pred.y2(), gt.y2()) - std::max(pred.y1(), gt.y1());
  g.intersection = std::max(0.0, ix) * std::max(0.0, iy);
  g.union_area = pred.area() + gt.area() - g.intersection;
  g.iou = g.intersection / g.union_area;
  g.enclose_w = std::max(pred.x2(), gt.x2()) - std::min(pred.x1(), gt.x1());
  g.enclose_h = std::max(pred.y2(), gt.y2()) - std::min(pred.y1(), gt.y1());
  g.enclose_area = g.enclose_w * g.enclose_h;
  double dx = pred.cx - gt.cx, dy = pred.cy - gt.cy;
  g.center_dist2 = dx * dx + dy * dy;
  return g;
}

double iou_of(const BBox& a, const BBox& b) { return iou_geometry(a, b).iou; }

GeometryT iou_geometry_t(const Tensor& pred, const BBox& gt) {
  if (pred.numel() != 4) {
    throw std::invalid_argument("iou_geometry_t: pred must hold [cx,cy,w,h], got " +
                                shape_str(pred.shape()));
  }
  Tensor cx = index_flat(pred, 0), cy = index_flat(pred, 1);
  Tensor w = index_flat(pred, 2), h = index_flat(pred, 3);
  Tensor half_w = mul_scalar(w, 0.5), half_h = mul_scalar(h, 0.5);
  Tensor px1 = sub(cx, half_w), px2 = add(cx, half_w);
  Tensor py1 = sub(cy, half_h), py2 = add(cy, half_h);
  Tensor gx1 = Tensor::scalar(gt.x1()), gx2 = Tensor::scalar(gt.x2());
  Tensor gy1 = Tensor::scalar(gt.y1()), gy2 = Tensor::scalar(gt.y2());

  Tensor zero = Tensor::scalar(0.0);
  Tensor iw = maximum(sub(minimum(px2, gx2), maximum(px1, gx1)), zero);
  Tensor ih = maximum(sub(minimum(py2, gy2), maximum(py1, gy1)), zero);

  GeometryT out;
  out.intersection = mul(iw, ih);
  out.union_area = sub(add(mul(w, h), Tensor::scalar(gt.area())), out.intersection);
  out.iou = div(out.intersection, out.union_area);
  out.enclose_w = sub(maximum(px2, gx2), minimum(px1, gx1));
  out.enclose_h = sub(maximum(py2, gy2), minimum(py1, gy1));
  out.enclose_area = mul(out.enclose_w, out.enclose_h);
  Tensor dx = sub(cx, Tensor::scalar(gt.cx));
  Tensor dy = sub(cy, Tensor::scalar(gt.cy));
  out.center_dist2 = add(square(dx), square(dy));
  return out;
}

double rasterized_iou_oracle(const BBox& a, const BBox& b, int grid) {
  if (grid < 1) throw std::invalid_argument("rasterized_iou_oracle: grid must be >= 1");
  auto cell_of = [grid](double v) { return static_cast<long long>(std::llround(v * grid)); };
  long long ax1 = cell_of(a.x1()), ax2 = cell_of(a.x2());
  long long ay1 = cell_of(a.y1()), ay2 = cell_of(a.y2());
  long long bx1 = cell_of(b.x1()), bx2 = cell_of(b.x2());
  long long by1 = cell_of(b.y1()), by2 = cell_of(b.y2());
  long long x_lo = std::min(ax1, bx1), x_hi = std::max(ax2, bx2);
  long long y_lo = std::min(ay1, by1), y_hi = std::max(ay2, by2);
  long long inter = 0, uni = 0;
  for (long long y = y_lo; y < y_hi; ++y) {
    for (long long x = x_lo; x < x_hi; ++x) {
      bool in_a = x >= ax1 && x < ax2 && y >= ay1 && y < ay2;
      bool in_b = x >= bx1 && x < bx2 && y >= by1 && y < by2;
      if (in_a && in_b) ++inter;
      if (in_a || in_b) ++uni;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

BoxLossVariant parse_box_loss(const std::string& name) {
  if (name == "iou") return BoxLossVariant::kIou;
  if (name == "giou") return BoxLossVariant::kGiou;
  if (name == "diou") return BoxLossVariant::kDiou;
  if (name == "ciou") return BoxLossVariant::kCiou;
  if (name == "eiou") return BoxLossVariant::kEiou;
  if (name == "siou") return BoxLossVariant::kSiou;
  if (name == "wiou1") return BoxLossVariant::kWiou1;
  if (name == "wiou2") return BoxLossVariant::kWiou2;
  if (name == "wiou3") return BoxLossVariant::kWiou3;
  throw std::invalid_argument("unknown box loss variant '" + name +
                              "' (expected iou|giou|diou|ciou|eiou|siou|wiou1|wiou2|wiou3)");
}

std::string box_loss_name(BoxLossVariant v) {
  switch (v) {
    case BoxLossVariant::kIou: return "iou";
    case BoxLossVariant::kGiou: return "giou";
    case BoxLossVariant::kDiou: return "diou";
    case BoxLossVariant::kCiou: return "ciou";
    case BoxLossVariant::kEiou: return "eiou";
    case BoxLossVariant::kSiou: return "siou";
    case BoxLossVariant::kWiou1: return "wiou1";
    case BoxLossVariant::kWiou2: return "wiou2";
    case BoxLossVariant::kWiou3: return "wiou3";
  }
  throw std::invalid_argument("unknown box loss variant enum");
}

const std::vector<BoxLossVariant>& all_box_loss_variants() {
  static const std::vector<BoxLossVariant> all = {
      BoxLossVariant::kIou,  BoxLossVariant::kGiou,  BoxLossVariant::kDiou,
      BoxLossVariant::kCiou, BoxLossVariant::kEiou,  BoxLossVariant::kSiou,
      BoxLossVariant::kWiou1, BoxLossVariant::kWiou2, BoxLossVariant::kWiou3};
  return all;
}

double wiou_v3_gain(double beta, double alpha, double delta) {
  return beta / (delta * std::pow(alpha, beta - delta));
}

namespace {

// exp(center_dist2 / frozen(Wg^2 + Hg^2)) * (1 - iou)
Tensor wiou_v1_loss(const GeometryT& g, const Tensor& liou, double diag2_frozen) {
  Tensor ratio = div(g.center_dist2, Tensor::scalar(diag2_frozen));
  return mul(exp_t(ratio), liou);
}

Tensor siou_loss(const GeometryT& g, const Tensor& pred, const BBox& gt, const Tensor& liou) {
  Tensor cx = index_flat(pred, 0), cy = index_flat(pred, 1);
  Tensor w = index_flat(pred, 2), h = index_flat(pred, 3);
  Tensor dx = abs_t(sub(Tensor::scalar(gt.cx), cx));
  Tensor dy = abs_t(sub(Tensor::scalar(gt.cy), cy));
  // sigma = center distance; tiny floor keeps the pred == gt case finite
  Tensor sigma = sqrt_t(add_scalar(g.center_dist2, 1e-16));
  // sine of the smaller angle between the center line and an axis, <= sin(45°)
  Tensor x = div(minimum(dx, dy), sigma);
  Tensor lambda = mul(mul_scalar(x, 2.0), sqrt_t(add_scalar(neg(square(x)), 1.0)));
  Tensor gamma = sub(Tensor::scalar(2.0), lambda);
  Tensor rho_x = square(div(sub(cx, Tensor::scalar(gt.cx)), g.enclose_w));
  Tensor rho_y = square(div(sub(cy, Tensor::scalar(gt.cy)), g.enclose_h));
  Tensor dist_cost = add(sub(Tensor::scalar(1.0), exp_t(neg(mul(gamma, rho_x)))),
                         sub(Tensor::scalar(1.0), exp_t(neg(mul(gamma, rho_y)))));
  Tensor ww = div(abs_t(sub(w, Tensor::scalar(gt.w))), maximum(w, Tensor::scalar(gt.w)));
  Tensor wh = div(abs_t(sub(h, Tensor::scalar(gt.h))), maximum(h, Tensor::scalar(gt.h)));
  Tensor sw = sub(Tensor::scalar(1.0), exp_t(neg(ww)));
  Tensor sh = sub(Tensor::scalar(1.0), exp_t(neg(wh)));
  Tensor shape_cost = add(square(square(sw)), square(square(sh)));  // theta = 4
  return add(liou, mul_scalar(add(dist_cost, shape_cost), 0.5));
}

}  // namespace

Tensor box_loss(const Tensor& pred, const BBox& gt, const BoxLossState& state,
                DetachAnchor* capture, const DetachAnchor* use) {
  if (gt.w <= 0 || gt.h <= 0) {
    throw std::invalid_argument("box_loss: ground-truth extents must be positive");
  }
  GeometryT g = iou_geometry_t(pred, gt);
  Tensor liou = sub(Tensor::scalar(1.0), g.iou);

  DetachAnchor local;
  {
    double wg = g.enclose_w.item(), hg = g.enclose_h.item();
    local.wiou_diag2 = wg * wg + hg * hg;
    local.v2_factor = std::pow(liou.item() / state.running_mean_liou, state.v2_gamma);
    double beta = liou.item() / state.running_mean_liou;  // outlier degree
    local.v3_gain = wiou_v3_gain(beta, state.v3_alpha, state.v3_delta);
  }
  if (state.variant == BoxLossVariant::kCiou) {
    double dv = std::atan(gt.w / gt.h) - std::atan(pred.data()[2] / pred.data()[3]);
    double v0 = 4.0 / (M_PI * M_PI) * dv * dv;
    local.ciou_alpha = v0 / ((1.0 - g.iou.item()) + v0 + 1e-16);
  }
  if (capture) *capture = local;
  const DetachAnchor& anchor = use ? *use : local;

  switch (state.variant) {
    case BoxLossVariant::kIou:
      return liou;
    case BoxLossVariant::kGiou: {
      Tensor penalty = div(sub(g.enclose_area, g.union_area), g.enclose_area);
      return add(liou, penalty);
    }
    case BoxLossVariant::kDiou: {
      Tensor diag2 = add(square(g.enclose_w), square(g.enclose_h));
      return add(liou, div(g.center_dist2, diag2));
    }
    case BoxLossVariant::kCiou: {
      Tensor diag2 = add(square(g.enclose_w), square(g.enclose_h));
      Tensor w = index_flat(pred, 2), h = index_flat(pred, 3);
      Tensor dv = sub(Tensor::scalar(std::atan(gt.w / gt.h)), atan_t(div(w, h)));
      Tensor v = mul_scalar(square(dv), 4.0 / (M_PI * M_PI));
      return add(add(liou, div(g.center_dist2, diag2)), mul_scalar(v, anchor.ciou_alpha));
    }
    case BoxLossVariant::kEiou: {
      Tensor diag2 = add(square(g.enclose_w), square(g.enclose_h));
      Tensor w = index_flat(pred, 2), h = index_flat(pred, 3);
      Tensor dw2 = square(sub(w, Tensor::scalar(gt.w)));
      Tensor dh2 = square(sub(h, Tensor::scalar(gt.h)));
      Tensor out = add(liou, div(g.center_dist2, diag2));
      out = add(out, div(dw2, square(g.enclose_w)));
      out = add(out, div(dh2, square(g.enclose_h)));
      return out;
    }
    case BoxLossVariant::kSiou:
      return siou_loss(g, pred, gt, liou);
    case BoxLossVariant::kWiou1:
      return wiou_v1_loss(g, liou, anchor.wiou_diag2);
    case BoxLossVariant::kWiou2:
      return mul_scalar(wiou_v1_loss(g, liou, anchor.wiou_diag2), anchor.v2_factor);
    case BoxLossVariant::kWiou3:
      return mul_scalar(wiou_v1_loss(g, liou, anchor.wiou_diag2), anchor.v3_gain);
  }
  throw std::invalid_argument("box_loss: unknown variant");
}

void update_state(BoxLossState& state, const std::vector<double>& detached_liou_batch) {
  if (!state.training) {
    throw std::logic_error("update_state: rejected outside training mode");
  }
  if (detached_liou_batch.empty()) {
    throw std::invalid_argument("update_state: empty batch");
  }
  double mean = 0.0;
  for (double v : detached_liou_batch) mean += v;
  mean /= static_cast<double>(detached_liou_batch.size());
  state.running_mean_liou = (1.0 - state.momentum) * state.running_mean_liou + state.momentum * mean;
}

}  // namespace dabf
