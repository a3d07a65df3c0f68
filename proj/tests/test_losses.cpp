#include <cmath>

#include <doctest.h>

#include "dabf/box_losses.hpp"
#include "dabf/gradcheck.hpp"
#include "dabf/ops.hpp"
#include "dabf/rng.hpp"

using namespace dabf;

namespace {

Tensor pred_tensor(const BBox& b, bool rg = true) {
  return Tensor::from({4}, {b.cx, b.cy, b.w, b.h}, rg);
}

// corner pairs used throughout: A overlaps at IoU 1/3, B differs in aspect
const BBox kPredA = BBox::from_corners(0, 0, 2, 2);
const BBox kGtA = BBox::from_corners(1, 0, 3, 2);
const BBox kPredB = BBox::from_corners(0, 0, 2, 2);
const BBox kGtB = BBox::from_corners(1, 0, 2, 2);

double loss_value(BoxLossVariant v, const BBox& pred, const BBox& gt) {
  BoxLossState s;
  s.variant = v;
  return box_loss(pred_tensor(pred, false), gt, s).item();
}

}  // namespace

TEST_CASE("iou_geometry hand cases") {
  SUBCASE("identical boxes") {
    BBox b{3, 4, 2, 5};
    EnclosureGeometry g = iou_geometry(b, b);
    CHECK(g.iou == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(g.center_dist2 == 0.0);
    CHECK(g.enclose_w == doctest::Approx(2.0));
    CHECK(g.enclose_h == doctest::Approx(5.0));
  }
  SUBCASE("disjoint unit boxes") {
    BBox a = BBox::from_corners(0, 0, 1, 1);
    BBox b = BBox::from_corners(2, 0, 3, 1);
    EnclosureGeometry g = iou_geometry(a, b);
    CHECK(g.iou == 0.0);
    CHECK(g.enclose_w == doctest::Approx(3.0));
    CHECK(g.enclose_h == doctest::Approx(1.0));
  }
  SUBCASE("one-third overlap pair") {
    EnclosureGeometry g = iou_geometry(kPredA, kGtA);
    CHECK(g.intersection == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(g.union_area == doctest::Approx(6.0).epsilon(1e-15));
    CHECK(g.iou == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(g.enclose_w == doctest::Approx(3.0));
    CHECK(g.enclose_h == doctest::Approx(2.0));
    CHECK(g.center_dist2 == doctest::Approx(1.0));
  }
}

TEST_CASE("tensor geometry path matches the plain path") {
  Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    BBox p{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.5, 4), rng.uniform(0.5, 4)};
    BBox g{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.5, 4), rng.uniform(0.5, 4)};
    EnclosureGeometry a = iou_geometry(p, g);
    GeometryT t = iou_geometry_t(pred_tensor(p, false), g);
    CHECK(t.iou.item() == doctest::Approx(a.iou).epsilon(1e-12));
    CHECK(t.enclose_w.item() == doctest::Approx(a.enclose_w).epsilon(1e-12));
    CHECK(t.center_dist2.item() == doctest::Approx(a.center_dist2).epsilon(1e-12));
  }
}

TEST_CASE("rasterized oracle examples and agreement") {
  BBox unit = BBox::from_corners(0, 0, 1, 1);
  CHECK(rasterized_iou_oracle(unit, unit, 4) == 1.0);
  CHECK(rasterized_iou_oracle(kPredA, kGtA, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(rasterized_iou_oracle(unit, BBox::from_corners(2, 0, 3, 1), 2) == 0.0);

  // 1000 seeded integer-aligned pairs at grid 4
  Rng rng(42);
  const int grid = 4;
  for (int i = 0; i < 1000; ++i) {
    auto aligned = [&](double lo, double hi) {
      return std::floor(rng.uniform(lo, hi) * grid) / grid;
    };
    BBox a = BBox::from_corners(aligned(-4, 0), aligned(-4, 0), aligned(0.25, 4), aligned(0.25, 4));
    BBox b = BBox::from_corners(aligned(-4, 0), aligned(-4, 0), aligned(0.25, 4), aligned(0.25, 4));
    if (a.w <= 0 || a.h <= 0 || b.w <= 0 || b.h <= 0) continue;
    double analytic = iou_geometry(a, b).iou;
    double oracle = rasterized_iou_oracle(a, b, grid);
    CHECK(std::abs(analytic - oracle) < 1e-9);
  }
}

TEST_CASE("zero at identity for all nine variants") {
  BBox b{2.5, -1.0, 3.0, 1.5};
  for (BoxLossVariant v : all_box_loss_variants()) {
    INFO(box_loss_name(v));
    CHECK(std::abs(loss_value(v, b, b)) < 1e-12);
  }
}

TEST_CASE("golden values, hand-derived") {
  // pair A: iou 1/3, Wg^2+Hg^2 = 13, center distance^2 = 1
  CHECK(loss_value(BoxLossVariant::kIou, kPredA, kGtA) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(loss_value(BoxLossVariant::kGiou, kPredA, kGtA) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(loss_value(BoxLossVariant::kDiou, kPredA, kGtA) == doctest::Approx(29.0 / 39.0).epsilon(1e-9));
  CHECK(loss_value(BoxLossVariant::kCiou, kPredA, kGtA) == doctest::Approx(29.0 / 39.0).epsilon(1e-9));
  CHECK(loss_value(BoxLossVariant::kEiou, kPredA, kGtA) == doctest::Approx(29.0 / 39.0).epsilon(1e-9));
  // exp(1/13) * 2/3
  const double wiou1_a = std::exp(1.0 / 13.0) * (2.0 / 3.0);
  CHECK(wiou1_a == doctest::Approx(0.719972666285458).epsilon(1e-12));
  CHECK(loss_value(BoxLossVariant::kWiou1, kPredA, kGtA) == doctest::Approx(wiou1_a).epsilon(1e-6));
  // aligned centers: angle term 0, distance cost (1 - e^{-2/9})/2, no shape cost
  CHECK(loss_value(BoxLossVariant::kSiou, kPredA, kGtA) ==
        doctest::Approx(0.766297965208263).epsilon(1e-9));
  // running mean 1.0: v2 factor (2/3)^0.5, v3 gain beta/(3*1.9^(beta-3)) at beta=2/3
  CHECK(loss_value(BoxLossVariant::kWiou2, kPredA, kGtA) ==
        doctest::Approx(0.587855220383495).epsilon(1e-9));
  CHECK(loss_value(BoxLossVariant::kWiou3, kPredA, kGtA) ==
        doctest::Approx(0.715366442754815).epsilon(1e-9));

  // pair B: iou 1/2, Wg^2+Hg^2 = 8, aspect term active
  CHECK(loss_value(BoxLossVariant::kDiou, kPredB, kGtB) == doctest::Approx(0.53125).epsilon(1e-9));
  CHECK(loss_value(BoxLossVariant::kCiou, kPredB, kGtB) ==
        doctest::Approx(0.534498129298557).epsilon(1e-9));
  CHECK(loss_value(BoxLossVariant::kEiou, kPredB, kGtB) == doctest::Approx(0.78125).epsilon(1e-9));
  CHECK(loss_value(BoxLossVariant::kSiou, kPredB, kGtB) ==
        doctest::Approx(0.570735874118209).epsilon(1e-9));

  // disjoint pair: enclosure 3, union 2
  BBox a = BBox::from_corners(0, 0, 1, 1);
  BBox b = BBox::from_corners(2, 0, 3, 1);
  CHECK(loss_value(BoxLossVariant::kGiou, a, b) == doctest::Approx(4.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("dominance and invariances over seeded pairs") {
  Rng rng(7);
  BoxLossState s;
  for (int i = 0; i < 10000; ++i) {
    BBox p{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0.3, 6), rng.uniform(0.3, 6)};
    BBox g{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0.3, 6), rng.uniform(0.3, 6)};
    double liou = 1.0 - iou_of(p, g);
    s.variant = BoxLossVariant::kWiou1;
    double w1 = box_loss(pred_tensor(p, false), g, s).item();
    CHECK(w1 >= liou - 1e-12);
    double dist2 = (p.cx - g.cx) * (p.cx - g.cx) + (p.cy - g.cy) * (p.cy - g.cy);
    if (dist2 == 0.0) CHECK(w1 == doctest::Approx(liou).epsilon(1e-12));
    if (w1 <= liou + 1e-12 && liou > 1e-9) CHECK(dist2 < 1e-12);

    // translation invariance of every variant
    double tx = rng.uniform(-20, 20), ty = rng.uniform(-20, 20);
    BBox pt{p.cx + tx, p.cy + ty, p.w, p.h};
    BBox gt{g.cx + tx, g.cy + ty, g.w, g.h};
    for (BoxLossVariant v : all_box_loss_variants()) {
      double before = loss_value(v, p, g);
      double after = loss_value(v, pt, gt);
      CHECK(after == doctest::Approx(before).epsilon(1e-12));
    }

    // scale invariance of the iou term and of the wiou distance ratio
    double k = rng.uniform(0.2, 8.0);
    BBox ps{p.cx * k, p.cy * k, p.w * k, p.h * k};
    BBox gs{g.cx * k, g.cy * k, g.w * k, g.h * k};
    CHECK(iou_of(ps, gs) == doctest::Approx(iou_of(p, g)).epsilon(1e-12));
    s.variant = BoxLossVariant::kWiou1;
    double w1s = box_loss(pred_tensor(ps, false), gs, s).item();
    CHECK(w1s == doctest::Approx(w1).epsilon(1e-12));
  }
}

TEST_CASE("enclosure denominator is detached in the wiou family") {
  // a pred sticking out of gt so the enclosure depends on pred; no edge
  // or center coincides with gt (keeps the geometry away from max ties)
  BBox pred{1.38, 0.85, 2.6, 2.34};
  BBox gt{2.0, 1.0, 2.0, 2.0};
  BoxLossState s;
  s.variant = BoxLossVariant::kWiou1;

  Tensor p1 = pred_tensor(pred);
  DetachAnchor anchor;
  backward(box_loss(p1, gt, s, &anchor));
  std::vector<double> detached_grad = p1.grad();

  // non-detached reference: same formula with the denominator on the graph
  Tensor p2 = pred_tensor(pred);
  {
    GeometryT g = iou_geometry_t(p2, gt);
    Tensor liou = sub(Tensor::scalar(1.0), g.iou);
    Tensor diag2 = add(square(g.enclose_w), square(g.enclose_h));
    backward(mul(exp_t(div(g.center_dist2, diag2)), liou));
  }
  std::vector<double> coupled_grad = p2.grad();

  bool differs = false;
  for (int i = 0; i < 4; ++i) differs |= std::abs(detached_grad[size_t(i)] - coupled_grad[size_t(i)]) > 1e-9;
  CHECK(differs);

  // the detached gradient matches finite differences of the partially
  // frozen function (denominator held at the base value)
  TensorFn frozen = [&](const std::vector<Tensor>& xs) {
    return box_loss(xs[0], gt, s, nullptr, &anchor);
  };
  GradCheckReport rep = finite_diff_check(frozen, {pred_tensor(pred)});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("update_state") {
  BoxLossState s;
  s.training = true;
  s.momentum = 0.1;
  s.running_mean_liou = 1.0;
  update_state(s, {0.5});
  CHECK(s.running_mean_liou == doctest::Approx(0.95).epsilon(1e-15));

  s.momentum = 0.0;
  update_state(s, {0.123});
  CHECK(s.running_mean_liou == doctest::Approx(0.95).epsilon(1e-15));

  // constant batches drive the mean monotonically toward the value
  s.momentum = 0.25;
  double prev = s.running_mean_liou;
  for (int i = 0; i < 50; ++i) {
    update_state(s, {0.2, 0.2, 0.2});
    CHECK(s.running_mean_liou < prev + 1e-15);
    prev = s.running_mean_liou;
  }
  CHECK(s.running_mean_liou == doctest::Approx(0.2).epsilon(1e-4));

  s.training = false;
  CHECK_THROWS_AS(update_state(s, {0.5}), std::logic_error);
}

TEST_CASE("wiou v3 gain: unit at beta == delta, continuous nearby") {
  CHECK(wiou_v3_gain(3.0, 1.9, 3.0) == 1.0);
  double eps = 1e-7;
  CHECK(std::abs(wiou_v3_gain(3.0 + eps, 1.9, 3.0) - 1.0) < 1e-5);
  CHECK(std::abs(wiou_v3_gain(3.0 - eps, 1.9, 3.0) - 1.0) < 1e-5);
}

TEST_CASE("unknown variant string rejected") {
  CHECK_THROWS_AS(parse_box_loss("focal"), std::invalid_argument);
  for (BoxLossVariant v : all_box_loss_variants()) {
    CHECK(parse_box_loss(box_loss_name(v)) == v);
  }
}

TEST_CASE("loss gradcheck suite passes") {
  auto results = run_gradchecks("loss");
  CHECK(results.size() == 9);
  for (const auto& r : results) {
    INFO(r.name, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
  }
}
