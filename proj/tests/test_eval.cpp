#include <algorithm>

#include <doctest.h>

#include "dabf/eval.hpp"
#include "dabf/rng.hpp"

using namespace dabf;

namespace {

Detection det(int cls, BBox b, double conf, int img = 0) { return {cls, b, conf, img}; }

}  // namespace

TEST_CASE("manual precision/recall enumeration") {
  // one gt; A matches at 0.9, B is disjoint at 0.8
  std::vector<std::vector<GroundTruth>> gts{{{0, BBox{10, 10, 4, 4}}}};
  std::vector<Detection> dets{det(0, BBox{10, 10, 4, 4}, 0.9),
                              det(0, BBox{30, 30, 4, 4}, 0.8)};
  EvalResult r = evaluate(dets, gts, 2);
  CHECK(r.precision == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.recall == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.ap50_per_class[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.map50 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero detections and perfect detections") {
  std::vector<std::vector<GroundTruth>> gts{
      {{0, BBox{10, 10, 4, 4}}, {1, BBox{30, 30, 8, 8}}}};
  EvalResult none = evaluate({}, gts, 2);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.map50 == 0.0);

  std::vector<Detection> dets{det(0, BBox{10, 10, 4, 4}, 1.0), det(1, BBox{30, 30, 8, 8}, 1.0)};
  EvalResult perfect = evaluate(dets, gts, 2);
  CHECK(perfect.precision == doctest::Approx(1.0));
  CHECK(perfect.recall == doctest::Approx(1.0));
  CHECK(perfect.map50 == doctest::Approx(1.0));
  CHECK(perfect.map5095 == doctest::Approx(1.0));
}

TEST_CASE("map5095 never exceeds map50") {
  Rng rng(64);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::vector<GroundTruth>> gts(3);
    std::vector<Detection> dets;
    for (int img = 0; img < 3; ++img) {
      int n = rng.uniform_int(1, 4);
      for (int i = 0; i < n; ++i) {
        BBox b{rng.uniform(8, 56), rng.uniform(8, 56), rng.uniform(4, 14), rng.uniform(4, 14)};
        int cls = rng.uniform_int(0, 1);
        gts[static_cast<size_t>(img)].push_back({cls, b});
        // jittered prediction
        BBox p{b.cx + rng.uniform(-2, 2), b.cy + rng.uniform(-2, 2), b.w * rng.uniform(0.8, 1.2),
               b.h * rng.uniform(0.8, 1.2)};
        dets.push_back(det(cls, p, rng.uniform(0.3, 1.0), img));
      }
      if (rng.bernoulli(0.5)) {
        dets.push_back(det(rng.uniform_int(0, 1),
                           BBox{rng.uniform(8, 56), rng.uniform(8, 56), 6, 6},
                           rng.uniform(0.1, 0.9), img));
      }
    }
    EvalResult r = evaluate(dets, gts, 2);
    CHECK(r.map5095 <= r.map50 + 1e-12);
  }
}

TEST_CASE("metrics invariant to permutation of equal-confidence detections") {
  std::vector<std::vector<GroundTruth>> gts{
      {{0, BBox{10, 10, 6, 6}}, {0, BBox{30, 10, 6, 6}}, {1, BBox{50, 40, 8, 8}}}};
  std::vector<Detection> dets{
      det(0, BBox{10.5, 10, 6, 6}, 0.7), det(0, BBox{30, 10.5, 6, 6}, 0.7),
      det(0, BBox{44, 44, 6, 6}, 0.7), det(1, BBox{50, 40, 8, 8}, 0.7)};
  EvalResult base = evaluate(dets, gts, 2);
  std::vector<size_t> perm{2, 0, 3, 1};
  std::vector<Detection> shuffled;
  for (size_t i : perm) shuffled.push_back(dets[i]);
  EvalResult p = evaluate(shuffled, gts, 2);
  CHECK(base.precision == doctest::Approx(p.precision).epsilon(1e-12));
  CHECK(base.recall == doctest::Approx(p.recall).epsilon(1e-12));
  CHECK(base.map50 == doctest::Approx(p.map50).epsilon(1e-12));
  CHECK(base.map5095 == doctest::Approx(p.map5095).epsilon(1e-12));
}

TEST_CASE("classes without ground truth are skipped in the mean") {
  std::vector<std::vector<GroundTruth>> gts{{{0, BBox{10, 10, 4, 4}}}};
  std::vector<Detection> dets{det(0, BBox{10, 10, 4, 4}, 0.9), det(1, BBox{20, 20, 4, 4}, 0.8)};
  EvalResult r = evaluate(dets, gts, 2);
  CHECK(r.map50 == doctest::Approx(1.0));  // class 1 has no gt anywhere
}
