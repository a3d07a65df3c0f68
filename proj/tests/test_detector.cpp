#include <cmath>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "dabf/checkpoint.hpp"
#include "dabf/flops.hpp"
#include "dabf/gradcheck.hpp"
#include "dabf/image_io.hpp"
#include "dabf/synth.hpp"
#include "dabf/train.hpp"

using namespace dabf;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.input_size = 32;
  mc.stem_width = 2;
  mc.stage_widths = {3, 4, 6};
  mc.neck_channels = 8;
  mc.num_levels = 2;  // strides 8, 16
  mc.neck = NeckKind::kBwfpn;
  mc.head = HeadKind::kDahead;
  mc.dahead = {1, 9, 4};
  return mc;
}

std::string temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("dabf_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("generate_scene determinism and counts") {
  SceneSpec spec;
  Scene a = generate_scene(spec, 17);
  Scene b = generate_scene(spec, 17);
  CHECK(a.image.data() == b.image.data());
  REQUIRE(a.objects.size() == b.objects.size());
  for (size_t i = 0; i < a.objects.size(); ++i) {
    CHECK(a.objects[i].class_id == b.objects[i].class_id);
    CHECK(a.objects[i].box.cx == b.objects[i].box.cx);
  }
  CHECK(a.objects.size() >= 1);
  CHECK(a.objects.size() <= 4);

  Scene c = generate_scene(spec, 18);
  CHECK(a.image.data() != c.image.data());
}

TEST_CASE("generate_scene overlap controls") {
  SceneSpec spec;
  spec.overlap_prob = 0.0;
  for (int i = 0; i < 40; ++i) {
    Scene s = generate_scene(spec, i);
    for (size_t a = 0; a < s.objects.size(); ++a) {
      for (size_t b = a + 1; b < s.objects.size(); ++b) {
        CHECK(iou_of(s.objects[a].box, s.objects[b].box) == 0.0);
      }
    }
  }
  spec.overlap_prob = 1.0;
  int overlapping_pairs = 0;
  for (int i = 0; i < 40; ++i) {
    Scene s = generate_scene(spec, i);
    for (size_t a = 0; a < s.objects.size(); ++a) {
      for (size_t b = a + 1; b < s.objects.size(); ++b) {
        overlapping_pairs += iou_of(s.objects[a].box, s.objects[b].box) > 0.0;
      }
    }
  }
  CHECK(overlapping_pairs > 10);
}

TEST_CASE("generate_scene single target") {
  SceneSpec spec;
  spec.min_targets = spec.max_targets = 1;
  for (int i = 0; i < 25; ++i) {
    CHECK(generate_scene(spec, i).objects.size() == 1);
  }
}

TEST_CASE("assign levels, cells and collisions") {
  std::vector<int> strides{8, 16, 32};
  SUBCASE("size bands") {
    CHECK(assign_level(10, strides, 16.0) == 0);
    CHECK(assign_level(16, strides, 16.0) == 0);
    CHECK(assign_level(16.01, strides, 16.0) == 1);
    CHECK(assign_level(32, strides, 16.0) == 1);
    CHECK(assign_level(33, strides, 16.0) == 2);
    CHECK(assign_level(200, strides, 16.0) == 2);
  }
  SUBCASE("small gt gets one positive at level 0") {
    std::vector<GroundTruth> gts{{0, BBox{20, 12, 10, 10}}};
    AssignResult ar = assign(gts, strides, 64, 2);
    REQUIRE(ar.positives.size() == 1);
    CHECK(ar.positives[0].level == 0);
    CHECK(ar.positives[0].cx == 2);
    CHECK(ar.positives[0].cy == 1);
    CHECK(ar.dropped_gts.empty());
  }
  SUBCASE("two gts in distinct cells give two positives") {
    std::vector<GroundTruth> gts{{0, BBox{10, 10, 12, 12}}, {1, BBox{50, 50, 12, 12}}};
    CHECK(assign(gts, strides, 64, 2).positives.size() == 2);
  }
  SUBCASE("cell boundary follows the floor rule") {
    std::vector<GroundTruth> gts{{0, BBox{16, 8, 10, 10}}};
    AssignResult ar = assign(gts, strides, 64, 2);
    CHECK(ar.positives[0].cx == 2);  // floor(16/8)
  }
  SUBCASE("same-cell collision keeps the first gt") {
    std::vector<GroundTruth> gts{{0, BBox{20, 20, 10, 10}}, {1, BBox{22, 22, 10, 10}}};
    AssignResult ar = assign(gts, strides, 64, 2);
    REQUIRE(ar.positives.size() == 1);
    CHECK(ar.positives[0].gt_index == 0);
    REQUIRE(ar.dropped_gts.size() == 1);
    CHECK(ar.dropped_gts[0] == 1);
  }
  SUBCASE("center outside the image is rejected") {
    std::vector<GroundTruth> gts{{0, BBox{70, 20, 10, 10}}};
    CHECK_THROWS_AS(assign(gts, strides, 64, 2), std::invalid_argument);
  }
}

TEST_CASE("assign -> decode round trip reproduces ground truth") {
  std::vector<int> strides{8, 16, 32};
  SceneSpec spec;
  for (int i = 0; i < 20; ++i) {
    Scene s = generate_scene(spec, i);
    AssignResult ar = assign(s.objects, strides, 64, 2);
    REQUIRE(ar.positives.size() == s.objects.size());
    std::vector<Tensor> maps = targets_to_maps(ar, strides, 64, 2);
    std::vector<Detection> dets = decode_and_nms(maps, strides, 0.5, 0.99);
    REQUIRE(dets.size() == s.objects.size());
    for (const Detection& d : dets) {
      // match to the gt with the same class and nearest center
      double best = 1e300;
      const GroundTruth* match = nullptr;
      for (const GroundTruth& g : s.objects) {
        if (g.class_id != d.class_id) continue;
        double dd = std::abs(g.box.cx - d.box.cx) + std::abs(g.box.cy - d.box.cy);
        if (dd < best) {
          best = dd;
          match = &g;
        }
      }
      REQUIRE(match != nullptr);
      CHECK(d.box.cx == doctest::Approx(match->box.cx).epsilon(1e-9));
      CHECK(d.box.cy == doctest::Approx(match->box.cy).epsilon(1e-9));
      CHECK(d.box.w == doctest::Approx(match->box.w).epsilon(1e-9));
      CHECK(d.box.h == doctest::Approx(match->box.h).epsilon(1e-9));
      CHECK(d.confidence == 1.0);
    }
  }
}

TEST_CASE("decode_and_nms behavior") {
  std::vector<int> strides{8};
  SUBCASE("nothing above threshold") {
    std::vector<Tensor> maps{Tensor::zeros({6, 2, 2})};
    CHECK(decode_and_nms(maps, strides, 0.25, 0.5).empty());
  }
  SUBCASE("identical boxes keep the higher confidence") {
    Tensor m = Tensor::zeros({6, 1, 2});
    auto& d = m.impl()->data;
    // two cells, same decoded box, conf 0.9 and 0.8 on class 0
    // cell 0 center (4,4): box needs ltrb to land on (6,4) size 4x4
    d[0 * 2 + 0] = 0.0;  // l
    d[1 * 2 + 0] = 2.0;  // t
    d[2 * 2 + 0] = 4.0;  // r
    d[3 * 2 + 0] = 2.0;  // b
    d[4 * 2 + 0] = 0.9;
    // cell 1 center (12,4): same box from the other side
    d[0 * 2 + 1] = 8.0;
    d[1 * 2 + 1] = 2.0;
    d[2 * 2 + 1] = -4.0;
    d[3 * 2 + 1] = 2.0;
    d[4 * 2 + 1] = 0.8;
    std::vector<Detection> out = decode_and_nms({m}, strides, 0.25, 0.5);
    REQUIRE(out.size() == 1);
    CHECK(out[0].confidence == 0.9);
  }
  SUBCASE("disjoint boxes both kept") {
    Tensor m = Tensor::zeros({6, 1, 2});
    auto& d = m.impl()->data;
    for (int cell = 0; cell < 2; ++cell) {
      for (int k = 0; k < 4; ++k) d[static_cast<size_t>(k) * 2 + cell] = 1.5;
      d[4 * 2 + cell] = 0.7;
    }
    CHECK(decode_and_nms({m}, strides, 0.25, 0.5).size() == 2);
  }
}

TEST_CASE("flops golden layers") {
  CHECK(conv_flops(8, 8, 32, 16, 3) == 589824);
  CHECK(conv_flops(1, 1, 1, 1, 1) == 2);
  CHECK(linear_flops(3, 5) == 30);
  // doubling spatial size quadruples conv cost
  CHECK(conv_flops(16, 16, 32, 16, 3) == 4 * conv_flops(8, 8, 32, 16, 3));

  ModelConfig mc;  // defaults
  FlopsReport rep = count_flops(mc);
  long long sum = 0;
  for (const LayerFlops& l : rep.layers) sum += l.flops;
  CHECK(sum == rep.total());

  ModelConfig plain = mc;
  plain.head = HeadKind::kPlain;
  CHECK(count_flops(mc).total() > count_flops(plain).total());

  ModelConfig fpn = mc;
  fpn.neck = NeckKind::kFpn;
  CHECK(count_flops(mc).total() != count_flops(fpn).total());
}

TEST_CASE("ppm and label round trip") {
  std::string dir = temp_dir("io");
  SceneSpec spec;
  Scene s = generate_scene(spec, 3);
  write_ppm(dir + "/img_00000.ppm", s.image);
  write_labels(dir + "/img_00000.txt", s.objects, 64);
  Dataset ds = load_dataset(dir);
  REQUIRE(ds.size() == 1);
  CHECK(ds[0].gts.size() == s.objects.size());
  // 8-bit quantization round trip
  for (size_t i = 0; i < s.image.data().size(); ++i) {
    CHECK(std::abs(ds[0].image.data()[i] - s.image.data()[i]) <= 0.5 / 255.0 + 1e-12);
  }
  for (size_t i = 0; i < s.objects.size(); ++i) {
    CHECK(ds[0].gts[i].box.cx == doctest::Approx(s.objects[i].box.cx).epsilon(1e-6));
  }
}

TEST_CASE("checkpoint round trip and validation") {
  ModelConfig mc = tiny_model_config();
  Model m1(mc, 5);
  std::string dir = temp_dir("ckpt");
  std::string path = dir + "/model.ckpt";
  save_checkpoint(path, snapshot_params(m1));

  Model m2(mc, 99);
  load_params(m2, load_checkpoint(path));
  bool equal = true;
  std::vector<std::pair<std::string, std::vector<double>>> p1, p2;
  m1.for_each_param([&](const std::string& n, Tensor& t) { p1.emplace_back(n, t.data()); });
  m2.for_each_param([&](const std::string& n, Tensor& t) { p2.emplace_back(n, t.data()); });
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) {
    for (size_t j = 0; j < p1[i].second.size(); ++j) {
      equal = equal && static_cast<float>(p1[i].second[j]) == static_cast<float>(p2[i].second[j]);
    }
  }
  CHECK(equal);

  // corrupt the magic
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), std::runtime_error);
}

TEST_CASE("training: zero learning rate freezes parameters") {
  ModelConfig mc = tiny_model_config();
  SceneSpec spec;
  spec.image_size = 32;
  spec.min_size = 10;
  spec.max_size = 20;
  Dataset ds;
  for (int i = 0; i < 4; ++i) {
    Scene s = generate_scene(spec, i);
    ds.push_back({s.image, s.objects});
  }
  Model model(mc, 3);
  std::vector<std::vector<double>> before;
  model.for_each_param([&](const std::string&, Tensor& t) { before.push_back(t.data()); });

  TrainConfig tc;
  tc.lr = 0.0;
  tc.epochs = 2;
  tc.batch_size = 2;
  tc.loss_state.variant = BoxLossVariant::kCiou;
  std::string dir = temp_dir("lr0");
  TrainResult res = train_model(model, ds, ds, tc, dir);

  std::vector<std::vector<double>> after;
  model.for_each_param([&](const std::string&, Tensor& t) { after.push_back(t.data()); });
  CHECK(before == after);
  // flat loss column
  CHECK(res.rows[0].loss == doctest::Approx(res.rows[1].loss).epsilon(1e-12));
}

TEST_CASE("training determinism: same seed, byte-identical outputs") {
  ModelConfig mc = tiny_model_config();
  SceneSpec spec;
  spec.image_size = 32;
  spec.min_size = 10;
  spec.max_size = 20;
  Dataset ds;
  for (int i = 0; i < 6; ++i) {
    Scene s = generate_scene(spec, i);
    ds.push_back({s.image, s.objects});
  }
  auto run = [&](const std::string& tag) {
    Model model(mc, 123);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 3;
    tc.seed = 123;
    tc.loss_state.variant = BoxLossVariant::kWiou3;
    std::string dir = temp_dir(tag);
    train_model(model, ds, ds, tc, dir);
    std::ifstream m(dir + "/metrics.csv", std::ios::binary);
    std::ifstream c(dir + "/model.ckpt", std::ios::binary);
    std::stringstream ms, cs;
    ms << m.rdbuf();
    cs << c.rdbuf();
    return std::make_pair(ms.str(), cs.str());
  };
  auto a = run("det_a");
  auto b = run("det_b");
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  ModelConfig mc = tiny_model_config();
  Model model(mc, 3);
  // poison a class-channel bias; the cross-entropy term sees every cell
  model.for_each_param([](const std::string& name, Tensor& t) {
    if (name == "head.pred0.b") t.leaf_data()[4] = std::numeric_limits<double>::quiet_NaN();
  });
  SceneSpec spec;
  spec.image_size = 32;
  spec.min_size = 10;
  spec.max_size = 20;
  Scene s = generate_scene(spec, 0);
  Dataset ds{{s.image, s.objects}};
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 1;
  std::string dir = temp_dir("nan");
  CHECK_THROWS_WITH_AS(train_model(model, ds, ds, tc, dir),
                       doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("detector pipeline gradient check") {
  auto results = run_gradchecks("detector");
  REQUIRE(!results.empty());
  for (const auto& r : results) {
    INFO(r.name, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
  }
}
