#include <algorithm>
#include <cmath>
#include <set>

#include <doctest.h>

#include "dabf/bwfpn.hpp"
#include "dabf/gradcheck.hpp"
#include "dabf/ops.hpp"
#include "dabf/rng.hpp"

using namespace dabf;

namespace {

FusionNodeParams identity_params(int channels, int n_inputs, double weight = 1.0) {
  FusionNodeParams p;
  p.weights = Tensor::full({n_inputs}, weight, true);
  std::vector<double> w(static_cast<size_t>(channels) * channels * 9, 0.0);
  for (int o = 0; o < channels; ++o) w[((static_cast<size_t>(o) * channels + o) * 3 + 1) * 3 + 1] = 1.0;
  p.conv_w = Tensor::from({channels, channels, 3, 3}, std::move(w), true);
  p.conv_b = Tensor::zeros({channels}, true);
  return p;
}

using EdgeSet = std::set<std::pair<std::string, std::string>>;

EdgeSet edge_set(const FusionTopology& t) {
  auto v = t.flow_edges();
  return EdgeSet(v.begin(), v.end());
}

EdgeSet rename(const EdgeSet& in, const std::string& from, const std::string& to) {
  EdgeSet out;
  for (auto [a, b] : in) {
    if (a == from) a = to;
    if (b == from) b = to;
    out.insert({a, b});
  }
  return out;
}

}  // namespace

TEST_CASE("fuse hand cases") {
  FusionNodeParams p = identity_params(1, 2);
  Tensor a = Tensor::full({1, 1, 1}, 2.0);
  Tensor b = Tensor::full({1, 1, 1}, 4.0);

  SUBCASE("equal weights") {
    Tensor out = fuse({a, b}, p, true, "n");
    CHECK(out.item() == doctest::Approx(6.0 / (2.0 + 1e-4)).epsilon(1e-12));
  }
  SUBCASE("zero second weight ignores the input") {
    p.weights = Tensor::from({2}, {1.0, 0.0}, true);
    Tensor out = fuse({a, b}, p, true, "n");
    CHECK(out.item() == doctest::Approx(2.0 / (1.0 + 1e-4)).epsilon(1e-12));
  }
  SUBCASE("all-zero weights give zero output") {
    p.weights = Tensor::zeros({2}, true);
    CHECK(fuse({a, b}, p, true, "n").item() == 0.0);
  }
  SUBCASE("single input rejected") {
    CHECK_THROWS_AS(fuse({a}, p, true, "n"), std::invalid_argument);
  }
}

TEST_CASE("normalized weights: range and sum bounds over 10^4 vectors") {
  Rng rng(2024);
  for (int i = 0; i < 10000; ++i) {
    int n = rng.uniform_int(2, 5);
    std::vector<double> raw(static_cast<size_t>(n));
    for (double& v : raw) v = rng.uniform(-3.0, 3.0);
    std::vector<double> norm = normalized_fusion_weights(raw, kFusionEps);
    double sum = 0.0, relu_sum = 0.0;
    for (double v : raw) relu_sum += std::max(0.0, v);
    for (double v : norm) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      sum += v;
    }
    CHECK(sum < 1.0);
    CHECK(sum == doctest::Approx(relu_sum / (relu_sum + kFusionEps)).epsilon(1e-12));
  }
}

TEST_CASE("fuse output bounds for non-negative inputs") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> w = {rng.uniform(-1, 2), rng.uniform(-1, 2), rng.uniform(-1, 2)};
    std::vector<Tensor> inputs;
    for (int i = 0; i < 3; ++i) {
      std::vector<double> d(6);
      for (double& v : d) v = rng.uniform(0.0, 5.0);
      inputs.push_back(Tensor::from({6}, std::move(d)));
    }
    Tensor out = fused_weighted_sum(inputs, Tensor::from({3}, w), kFusionEps);
    std::vector<double> norm = normalized_fusion_weights(w, kFusionEps);
    double s = 0.0;
    for (double v : norm) s += v;
    for (int j = 0; j < 6; ++j) {
      double lo = 1e300, hi = -1e300;
      for (const Tensor& t : inputs) {
        lo = std::min(lo, t.data()[static_cast<size_t>(j)]);
        hi = std::max(hi, t.data()[static_cast<size_t>(j)]);
      }
      CHECK(out.data()[static_cast<size_t>(j)] >= lo * s - 1e-12);
      CHECK(out.data()[static_cast<size_t>(j)] <= hi * s + 1e-12);
    }
  }
}

TEST_CASE("topology structure at 3 levels") {
  FusionTopology t = build_topology(NeckKind::kBwfpn, 3, 1);
  // one top-down intermediate plus three outputs
  CHECK(t.nodes.size() == 4);
  int three_input = 0;
  for (const auto& n : t.nodes) {
    CHECK(n.inputs.size() >= 2);
    three_input += n.inputs.size() == 3;
  }
  CHECK(three_input == 1);
  // every interior output keeps an edge from its original input
  EdgeSet e = edge_set(t);
  CHECK(e.count({"in1", "out1"}) == 1);
  CHECK(e.count({"in0", "out0"}) == 1);
  CHECK(e.count({"in2", "out2"}) == 1);
}

TEST_CASE("fpn has no bottom-up edges") {
  FusionTopology t = build_topology(NeckKind::kFpn, 4, 1);
  for (const auto& n : t.nodes) {
    for (const auto& edge : n.inputs) {
      CHECK(edge.resample != FusionEdge::Resample::kDown);
    }
  }
}

TEST_CASE("flow-edge relations between fpn, panet and bwfpn") {
  for (int levels : {3, 5}) {
    CAPTURE(levels);
    EdgeSet fpn = edge_set(build_topology(NeckKind::kFpn, levels, 1));
    EdgeSet panet = edge_set(build_topology(NeckKind::kPanet, levels, 1));
    EdgeSet bwfpn = edge_set(build_topology(NeckKind::kBwfpn, levels, 1));

    // every fpn edge exists in panet (shared top-down chain)
    for (const auto& e : fpn) CHECK(panet.count(e) == 1);

    // bwfpn = panet (bottom td renamed to its output role) plus the
    // input->output skip edges at interior levels
    EdgeSet expected = rename(panet, "td0", "out0");
    for (int i = 1; i < levels - 1; ++i) {
      expected.insert({"in" + std::to_string(i), "out" + std::to_string(i)});
    }
    CHECK(bwfpn == expected);
  }
}

TEST_CASE("build_topology rejects degenerate level counts") {
  CHECK_THROWS_AS(build_topology(NeckKind::kBwfpn, 1, 1), std::invalid_argument);
}

TEST_CASE("run_neck on constant and zero pyramids") {
  Rng rng(3);
  Neck neck(build_topology(NeckKind::kBwfpn, 3, 1), 2, rng);
  FeaturePyramid p;
  p.strides = {8, 16, 32};
  p.levels = {Tensor::full({2, 8, 8}, 1.0), Tensor::full({2, 4, 4}, 1.0),
              Tensor::full({2, 2, 2}, 1.0)};
  FeaturePyramid out = neck.run(p);
  // constant ones: each node applies coefficient 1/(n+eps) per input
  const double e = 1e-4;
  const double td1 = (1.0 + 1.0) / (2.0 + e);
  const double out0 = (1.0 + td1) / (2.0 + e);
  const double out1 = (1.0 + td1 + out0) / (3.0 + e);
  const double out2 = (1.0 + out1) / (2.0 + e);
  for (double v : out.levels[0].data()) CHECK(v == doctest::Approx(out0).epsilon(1e-12));
  for (double v : out.levels[1].data()) CHECK(v == doctest::Approx(out1).epsilon(1e-12));
  for (double v : out.levels[2].data()) CHECK(v == doctest::Approx(out2).epsilon(1e-12));

  FeaturePyramid z;
  z.strides = {8, 16, 32};
  z.levels = {Tensor::zeros({2, 8, 8}), Tensor::zeros({2, 4, 4}), Tensor::zeros({2, 2, 2})};
  FeaturePyramid zo = neck.run(z);
  for (const Tensor& t : zo.levels) {
    for (double v : t.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("run_neck matches the hand-unrolled formula oracle") {
  // equal weights, identity convs: compare against explicit array math
  Rng rng(5);
  const int C = 2;
  Neck neck(build_topology(NeckKind::kBwfpn, 3, 1), C, rng);

  auto rnd = [&rng](Shape s) {
    std::vector<double> d(static_cast<size_t>(shape_numel(s)));
    for (double& v : d) v = rng.uniform(-2, 2);
    return Tensor::from(std::move(s), std::move(d));
  };
  FeaturePyramid p;
  p.strides = {8, 16, 32};
  p.levels = {rnd({C, 8, 8}), rnd({C, 4, 4}), rnd({C, 2, 2})};
  FeaturePyramid out = neck.run(p);

  // plain-array helpers, independent of the tensor engine
  using Map = std::vector<double>;
  auto up2 = [C](const Map& m, int h, int w) {
    Map o(static_cast<size_t>(C) * 4 * h * w);
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < 2 * h; ++y) {
        for (int x = 0; x < 2 * w; ++x) {
          o[(static_cast<size_t>(c) * 2 * h + y) * 2 * w + x] = m[(static_cast<size_t>(c) * h + y / 2) * w + x / 2];
        }
      }
    }
    return o;
  };
  auto down2 = [C](const Map& m, int h, int w) {
    Map o(static_cast<size_t>(C) * (h / 2) * (w / 2));
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < h / 2; ++y) {
        for (int x = 0; x < w / 2; ++x) {
          o[(static_cast<size_t>(c) * (h / 2) + y) * (w / 2) + x] = m[(static_cast<size_t>(c) * h + 2 * y) * w + 2 * x];
        }
      }
    }
    return o;
  };
  auto mix = [](const std::vector<const Map*>& ins) {
    double coeff = 1.0 / (static_cast<double>(ins.size()) + 1e-4);
    Map o(ins[0]->size(), 0.0);
    for (const Map* m : ins) {
      for (size_t i = 0; i < o.size(); ++i) o[i] += coeff * (*m)[i];
    }
    return o;
  };

  const Map& in0 = p.levels[0].data();
  const Map& in1 = p.levels[1].data();
  const Map& in2 = p.levels[2].data();
  Map up_in2 = up2(in2, 2, 2);
  Map td1 = mix({&in1, &up_in2});
  Map up_td1 = up2(td1, 4, 4);
  Map out0 = mix({&in0, &up_td1});
  Map down_out0 = down2(out0, 8, 8);
  Map out1 = mix({&in1, &td1, &down_out0});
  Map down_out1 = down2(out1, 4, 4);
  Map out2 = mix({&in2, &down_out1});

  auto expect_equal = [](const Map& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  };
  expect_equal(out0, out.levels[0].data());
  expect_equal(out1, out.levels[1].data());
  expect_equal(out2, out.levels[2].data());
}

TEST_CASE("stacked layers chain outputs into inputs") {
  Rng rng(6);
  Neck one(build_topology(NeckKind::kBwfpn, 3, 1), 2, rng);
  Neck two(build_topology(NeckKind::kBwfpn, 3, 2), 2, rng);
  FeaturePyramid p;
  p.strides = {8, 16, 32};
  auto rnd = [&rng](Shape s) {
    std::vector<double> d(static_cast<size_t>(shape_numel(s)));
    for (double& v : d) v = rng.uniform(-1, 1);
    return Tensor::from(std::move(s), std::move(d));
  };
  p.levels = {rnd({2, 8, 8}), rnd({2, 4, 4}), rnd({2, 2, 2})};
  FeaturePyramid once = one.run(one.run(p));
  FeaturePyramid twice = two.run(p);
  for (int l = 0; l < 3; ++l) {
    REQUIRE(once.levels[static_cast<size_t>(l)].numel() == twice.levels[static_cast<size_t>(l)].numel());
    for (long long i = 0; i < once.levels[static_cast<size_t>(l)].numel(); ++i) {
      CHECK(once.levels[static_cast<size_t>(l)].data()[static_cast<size_t>(i)] ==
            doctest::Approx(twice.levels[static_cast<size_t>(l)].data()[static_cast<size_t>(i)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("run_neck rejects level-count mismatch") {
  Rng rng(8);
  Neck neck(build_topology(NeckKind::kBwfpn, 3, 1), 2, rng);
  FeaturePyramid p;
  p.strides = {8, 16};
  p.levels = {Tensor::zeros({2, 8, 8}), Tensor::zeros({2, 4, 4})};
  CHECK_THROWS_AS(neck.run(p), std::invalid_argument);
}

TEST_CASE("bwfpn layer gradient check") {
  auto results = run_gradchecks("bwfpn");
  REQUIRE(!results.empty());
  for (const auto& r : results) {
    INFO(r.name, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
  }
}
