#include <cmath>

#include "dabf/bwfpn.hpp"
#include "dabf/dahead.hpp"
#include "dabf/gradcheck.hpp"
#include "dabf/image_io.hpp"
#include "dabf/ops.hpp"
#include "dabf/runconfig.hpp"
#include "dabf/synth.hpp"
#include "dabf/train.hpp"

namespace dabf {

namespace {

Tensor rand_tensor(Rng& rng, Shape shape, double lo, double hi, bool rg = true) {
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
  for (double& v : d) v = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(d), rg);
}

// Max relative error of f over `points` kink-avoiding seeded samples.
// The checked objective is f plus a random linear term in every input:
// the linear part is exact under central differences, but it moves
// gradient coordinates away from zero, where quotient noise against the
// 1e-8 denominator floor would otherwise dominate the comparison.
GradCheckReport multi_point(uint64_t seed, int points, const TensorFn& f,
                            const std::function<std::vector<Tensor>(Rng&)>& gen,
                            double margin = 1e-3) {
  GradCheckReport worst;
  for (int i = 0; i < points; ++i) {
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(i)));
    std::vector<Tensor> at = sample_smooth_point(rng, f, gen, margin);
    std::vector<std::vector<double>> coeffs;
    for (const Tensor& t : at) {
      std::vector<double> c(t.data().size());
      for (double& v : c) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.5, 1.0);
      coeffs.push_back(std::move(c));
    }
    TensorFn probed = [&f, &coeffs](const std::vector<Tensor>& xs) {
      Tensor out = f(xs);
      for (size_t q = 0; q < xs.size(); ++q) {
        out = add(out, sum_all(mul(xs[q], Tensor::from(xs[q].shape(), coeffs[q]))));
      }
      return out;
    };
    GradCheckReport rep = finite_diff_check(probed, at);
    worst.coords_checked += rep.coords_checked;
    if (rep.max_rel_err > worst.max_rel_err) {
      worst.max_rel_err = rep.max_rel_err;
      worst.worst = rep.worst;
    }
  }
  return worst;
}

void add(const char* name, const char* module, double tol, std::function<GradCheckReport()> run) {
  register_gradcheck({name, module, tol, std::move(run)});
}

// ---- composed-module helpers ----------------------------------------

// 2-level, 4-channel toy pyramid block: inputs are the two level grids
// followed by every block parameter.
struct BlockFixture {
  int L = 2, C = 4, H = 4, W = 4;
  DaHeadConfig cfg{1, 9, 4};

  std::vector<Tensor> gen(Rng& rng) const {
    std::vector<Tensor> xs;
    xs.push_back(rand_tensor(rng, {C, H, W}, 0.2, 1.0));           // level 0
    xs.push_back(rand_tensor(rng, {C, H / 2, W / 2}, 0.2, 1.0));   // level 1
    xs.push_back(rand_tensor(rng, {L, L}, -0.5, 0.5));             // scale weight
    xs.push_back(rand_tensor(rng, {L}, 0.2, 0.8));                 // scale bias
    xs.push_back(rand_tensor(rng, {27, C, 3, 3}, -0.05, 0.05));    // offset predictor
    xs.push_back(rand_tensor(rng, {27}, 0.05, 0.3));               // predictor bias
    xs.push_back(rand_tensor(rng, {L, 9}, 0.1, 0.6));              // omega
    xs.push_back(rand_tensor(rng, {C, 1}, -0.8, 0.8));             // task w1 (r=4)
    xs.push_back(rand_tensor(rng, {1}, 0.1, 0.4));                 // task b1
    xs.push_back(rand_tensor(rng, {1, 4 * C}, -0.4, 0.4));         // task w2
    xs.push_back(rand_tensor(rng, {4 * C}, -0.3, 0.3));            // task b2
  return xs;
  }

  Tensor run(const std::vector<Tensor>& xs) const {
    FeaturePyramid p;
    p.levels = {xs[0], xs[1]};
    p.strides = {8, 16};
    UnifiedFeature u = unify(p);
    DaHeadBlockParams bp;
    bp.scale = {xs[2], xs[3]};
    bp.spatial = {xs[4], xs[5], xs[6]};
    bp.task = {xs[7], xs[8], xs[9], xs[10]};
    return sum_all(dahead_block(u, bp, cfg));
  }
};

// 3-level weighted fusion layer over 2 channels; inputs then weights and
// conv parameters of every node.
Tensor run_neck_fixture(const FusionTopology& topo, int C, const std::vector<Tensor>& xs) {
  Rng dummy(0);
  Neck neck(topo, C, dummy);
  size_t xi = 3;
  for (auto& node : neck.layers()[0]) {
    node.weights = xs[xi++];
    node.conv_w = xs[xi++];
    node.conv_b = xs[xi++];
  }
  FeaturePyramid p;
  p.levels = {xs[0], xs[1], xs[2]};
  p.strides = {8, 16, 32};
  FeaturePyramid out = neck.run(p);
  Tensor total;
  for (const Tensor& lvl : out.levels) {
    Tensor s = sum_all(lvl);
    total = total.defined() ? add(total, s) : s;
  }
  return total;
}

std::pair<Tensor, BBox> random_box_pair(Rng& rng) {
  BBox gt{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(1.0, 3.0),
          rng.uniform(1.0, 3.0)};
  Tensor pred = Tensor::from(
      Shape{4},
      {gt.cx + rng.uniform(0.2, 0.9), gt.cy + rng.uniform(0.15, 0.8),
       gt.w * rng.uniform(0.7, 1.4) + 0.11, gt.h * rng.uniform(0.7, 1.4) + 0.13},
      true);
  return {pred, gt};
}

// Tiny end-to-end pipeline: 8x8 image, 2 levels, one-object scene.
struct PipelineFixture {
  ModelConfig mc;
  TrainConfig tc;
  Sample sample;

  PipelineFixture() {
    mc.input_size = 8;
    mc.stem_width = 2;
    mc.stage_widths = {3, 4};
    mc.neck_channels = 4;
    mc.num_levels = 2;
    mc.neck = NeckKind::kBwfpn;
    mc.head = HeadKind::kDahead;
    mc.dahead = {1, 9, 4};
    // fully graph-connected variant; the frozen-factor family has its own
    // per-loss checks above
    tc.loss_state.variant = BoxLossVariant::kGiou;
    sample.gts = {{0, BBox{4.2, 3.7, 5.0, 4.0}}, {1, BBox{1.6, 6.1, 2.5, 3.0}}};
  }

  Tensor run(const std::vector<Tensor>& xs) const {
    Model model(mc, 7);
    size_t xi = 1;
    model.for_each_param([&](const std::string&, Tensor& t) { t = xs[xi++]; });
    Sample s = sample;
    s.image = xs[0];
    return detection_loss(model, s, tc, tc.loss_state).total;
  }

  std::vector<Tensor> gen(Rng& rng) const {
    std::vector<Tensor> xs;
    xs.push_back(rand_tensor(rng, {3, 8, 8}, 0.05, 0.95));
    Model proto(mc, 11);
    proto.for_each_param([&](const std::string& name, Tensor& t) {
      double lo = -0.45, hi = 0.45;
      if (name.find(".b") != std::string::npos) {
        lo = 0.02;
        hi = 0.3;
      }
      xs.push_back(rand_tensor(rng, t.shape(), lo, hi));
    });
    return xs;
  }
};

bool g_registered = false;

}  // namespace

void register_builtin_gradchecks() {
  if (g_registered) return;
  g_registered = true;

  // ---- tensor ops ----
  add("add_broadcast", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) { return sum_all(mul(add(xs[0], xs[1]), xs[0])); };
    return multi_point(101, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {2, 3, 4}, -1, 1), rand_tensor(rng, {3, 1}, -1, 1)};
    });
  });
  add("mul_div", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) { return sum_all(div(mul(xs[0], xs[1]), xs[1])); };
    return multi_point(102, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {3, 4}, -1, 1), rand_tensor(rng, {3, 4}, 0.5, 2.0)};
    });
  });
  add("maximum_minimum", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) {
      return sum_all(add(maximum(xs[0], xs[1]), minimum(square(xs[0]), xs[1])));
    };
    return multi_point(103, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {4, 4}, -1, 1), rand_tensor(rng, {4, 4}, -1, 1)};
    });
  });
  add("relu", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) { return sum_all(relu(xs[0])); };
    return multi_point(104, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {5, 5}, -1, 1)};
    });
  });
  add("hard_sigmoid", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) { return sum_all(square(hard_sigmoid(xs[0]))); };
    return multi_point(105, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {6}, -5, 5)};
    });
  });
  add("sigmoid_exp", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) { return sum_all(mul(sigmoid(xs[0]), exp_t(xs[0]))); };
    return multi_point(106, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {7}, -2, 2)};
    });
  });
  add("sqrt_atan_abs", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) {
      return sum_all(add(sqrt_t(xs[0]), mul(atan_t(xs[1]), abs_t(xs[1]))));
    };
    return multi_point(107, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {4}, 0.3, 2.0), rand_tensor(rng, {4}, -2, 2)};
    });
  });
  add("softplus_bce", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) {
      return sum_all(add(softplus(xs[0]), bce_with_logits(xs[0], {0, 1, 0, 1, 1, 0})));
    };
    return multi_point(108, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {6}, -3, 3)};
    });
  });
  add("reduce_mean_sum", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) {
      return add(reduce_mean(square(xs[0]), {0, 1, 2}), sum_all(reduce_sum(xs[0], {1})));
    };
    return multi_point(109, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {2, 3, 2}, -1, 1)};
    });
  });
  add("linear", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) {
      return sum_all(square(linear(xs[0], xs[1], xs[2])));
    };
    return multi_point(110, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {2, 3}, -1, 1), rand_tensor(rng, {3, 4}, -1, 1),
                                 rand_tensor(rng, {4}, -1, 1)};
    });
  });
  add("conv2d", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) {
      return sum_all(square(conv2d(xs[0], xs[1], xs[2], 2, 1)));
    };
    return multi_point(111, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {1, 2, 5, 5}, -1, 1),
                                 rand_tensor(rng, {3, 2, 3, 3}, -1, 1), rand_tensor(rng, {3}, -1, 1)};
    });
  });
  add("conv2d_relu", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) {
      return sum_all(relu(conv2d(xs[0], xs[1], xs[2], 1, 0)));
    };
    return multi_point(112, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {1, 2, 4, 4}, -1, 1),
                                 rand_tensor(rng, {2, 2, 2, 2}, -1, 1), rand_tensor(rng, {2}, -1, 1)};
    });
  });
  add("maxpool2d", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) { return sum_all(maxpool2d(xs[0], 3, 1, 1)); };
    return multi_point(113, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {2, 4, 4}, -1, 1)};
    });
  });
  add("bilinear_sample", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) {
      return sum_all(square(bilinear_sample(xs[0], xs[1])));
    };
    return multi_point(114, 5, f, [](Rng& rng) {
      Tensor img = rand_tensor(rng, {2, 5, 5}, -1, 1);
      std::vector<double> pts;
      for (int p = 0; p < 6; ++p) {
        pts.push_back(rng.uniform(-0.8, 4.8));
        pts.push_back(rng.uniform(-0.8, 4.8));
      }
      return std::vector<Tensor>{img, Tensor::from(Shape{6, 2}, std::move(pts), true)};
    });
  });
  add("resize_stack_slice", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) {
      Tensor up = resize_up2(xs[0]);
      Tensor down = resize_down2(up);
      Tensor st = stack0({down, xs[0]});
      return sum_all(square(index_select0(st, 1)));
    };
    return multi_point(115, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {2, 4, 4}, -1, 1)};
    });
  });
  add("fused_weighted_sum", "tensor", 1e-4, [] {
    TensorFn f = [](const std::vector<Tensor>& xs) {
      return sum_all(square(fused_weighted_sum({xs[0], xs[1], xs[2]}, xs[3], kFusionEps)));
    };
    return multi_point(116, 5, f, [](Rng& rng) {
      return std::vector<Tensor>{rand_tensor(rng, {3, 3}, -1, 1), rand_tensor(rng, {3, 3}, -1, 1),
                                 rand_tensor(rng, {3, 3}, -1, 1), rand_tensor(rng, {3}, 0.2, 1.5)};
    });
  });

  // ---- dahead ----
  {
    auto fixture = std::make_shared<BlockFixture>();
    TensorFn f = [fixture](const std::vector<Tensor>& xs) { return fixture->run(xs); };
    add("dahead_block", "dahead", 1e-4, [fixture, f] {
      return multi_point(201, 5, f, [fixture](Rng& rng) { return fixture->gen(rng); });
    });
  }

  // ---- bwfpn ----
  {
    auto topo = std::make_shared<FusionTopology>(build_topology(NeckKind::kBwfpn, 3, 1));
    TensorFn f = [topo](const std::vector<Tensor>& xs) { return run_neck_fixture(*topo, 2, xs); };
    add("bwfpn_layer", "bwfpn", 1e-4, [topo, f] {
      return multi_point(301, 5, f, [topo](Rng& rng) {
        std::vector<Tensor> xs;
        xs.push_back(rand_tensor(rng, {2, 8, 8}, -1.0, 1.0));
        xs.push_back(rand_tensor(rng, {2, 4, 4}, -1.0, 1.0));
        xs.push_back(rand_tensor(rng, {2, 2, 2}, -1.0, 1.0));
        for (const FusionNodeSpec& n : topo->nodes) {
          xs.push_back(rand_tensor(rng, {static_cast<int>(n.inputs.size())}, 0.3, 1.5));
          xs.push_back(rand_tensor(rng, {2, 2, 3, 3}, -0.3, 0.3));
          xs.push_back(rand_tensor(rng, {2}, -0.1, 0.1));
        }
        return xs;
      });
    });
  }

  // ---- losses (frozen detached factors are the differentiated function) ----
  for (BoxLossVariant v : all_box_loss_variants()) {
    std::string name = "loss_" + box_loss_name(v);
    add(name.c_str(), "loss", 1e-4, [v] {
      BoxLossState state;
      state.variant = v;
      state.running_mean_liou = 0.8;
      GradCheckReport worst;
      for (int i = 0; i < 5; ++i) {
        Rng rng(Rng::mix(401 + static_cast<uint64_t>(v), static_cast<uint64_t>(i)));
        // kink-avoiding sample: resample until the forward keeps margins
        TensorFn probe = [&state](const std::vector<Tensor>& xs) {
          BBox gt{xs[1].data()[0], xs[1].data()[1], xs[1].data()[2], xs[1].data()[3]};
          return box_loss(xs[0], gt, state);
        };
        std::vector<Tensor> at = sample_smooth_point(
            rng, probe,
            [](Rng& r) {
              auto [pred, gt] = random_box_pair(r);
              return std::vector<Tensor>{
                  pred, Tensor::from(Shape{4}, {gt.cx, gt.cy, gt.w, gt.h}, false)};
            },
            1e-3);
        BBox gt{at[1].data()[0], at[1].data()[1], at[1].data()[2], at[1].data()[3]};
        DetachAnchor anchor;
        box_loss(at[0], gt, state, &anchor);
        TensorFn frozen = [&state, gt, anchor](const std::vector<Tensor>& xs) {
          return box_loss(xs[0], gt, state, nullptr, &anchor);
        };
        GradCheckReport rep = finite_diff_check(frozen, {at[0]});
        worst.coords_checked += rep.coords_checked;
        if (rep.max_rel_err > worst.max_rel_err) worst = rep;
      }
      return worst;
    });
  }

  // ---- detector (full tiny pipeline) ----
  {
    auto fixture = std::make_shared<PipelineFixture>();
    TensorFn f = [fixture](const std::vector<Tensor>& xs) { return fixture->run(xs); };
    add("tiny_pipeline_loss", "detector", 1e-4, [fixture, f] {
      return multi_point(501, 5, f, [fixture](Rng& rng) { return fixture->gen(rng); });
    });
  }
}

}  // namespace dabf
