#include "dabf/flops.hpp"

namespace dabf {

long long conv_flops(int out_h, int out_w, int c_out, int c_in, int k) {
  return 2LL * out_h * out_w * c_out * c_in * k * k;
}

long long linear_flops(int d, int e) { return 2LL * d * e; }

FlopsReport count_flops(const ModelConfig& cfg) {
  cfg.validate();
  FlopsReport rep;
  auto put = [&rep](const std::string& name, long long flops) {
    rep.layers.push_back({name, flops});
  };

  const int stages = static_cast<int>(cfg.stage_widths.size());
  int hw = cfg.input_size / 2;
  put("stem.conv", conv_flops(hw, hw, cfg.stem_width, 3, 3));
  put("stem.relu", static_cast<long long>(cfg.stem_width) * hw * hw);
  int prev = cfg.stem_width;
  for (int i = 0; i < stages; ++i) {
    int w = cfg.stage_widths[static_cast<size_t>(i)];
    hw /= 2;
    std::string base = "stage" + std::to_string(i);
    long long elems = static_cast<long long>(w) * hw * hw;
    put(base + ".down", conv_flops(hw, hw, w, prev, 3));
    put(base + ".res0", conv_flops(hw, hw, w, w, 3));
    put(base + ".res1", conv_flops(hw, hw, w, w, 3));
    put(base + ".elementwise", 4 * elems);  // 3 relu + residual add
    prev = w;
    if (i == stages - 1 && cfg.sppf) {
      put("sppf.pools", 3 * elems);
      put("sppf.fuse", conv_flops(hw, hw, w, 4 * w, 1));
      put("sppf.relu", elems);
    }
  }

  const std::vector<int> strides = cfg.strides();
  const int L = cfg.num_levels;
  const int C = cfg.neck_channels;
  std::vector<int> grid(static_cast<size_t>(L));
  for (int l = 0; l < L; ++l) grid[static_cast<size_t>(l)] = cfg.input_size / strides[static_cast<size_t>(l)];

  for (int l = 0; l < L; ++l) {
    int tap_w = cfg.stage_widths[static_cast<size_t>(stages - L + l)];
    int g = grid[static_cast<size_t>(l)];
    put("lateral" + std::to_string(l), conv_flops(g, g, C, tap_w, 1));
  }

  FusionTopology topo = build_topology(cfg.neck, L, cfg.neck_layers);
  for (int layer = 0; layer < cfg.neck_layers; ++layer) {
    for (const FusionNodeSpec& n : topo.nodes) {
      int lvl = n.out_level;
      if (lvl < 0) {  // intermediate node lives at the level it was named for
        lvl = n.name.back() - '0';
      }
      int g = grid[static_cast<size_t>(lvl)];
      long long elems = static_cast<long long>(C) * g * g;
      std::string base = "neck.l" + std::to_string(layer) + "." + n.name;
      // resamples + weighted mix, 1 flop per element per input edge
      put(base + ".fuse", static_cast<long long>(n.inputs.size()) * elems);
      put(base + ".conv", conv_flops(g, g, C, C, 3));
    }
  }

  const int out_ch = 4 + cfg.num_classes;
  if (cfg.head == HeadKind::kPlain) {
    for (int l = 0; l < L; ++l) {
      int g = grid[static_cast<size_t>(l)];
      put("head.pred" + std::to_string(l), conv_flops(g, g, out_ch, C, 1));
    }
  } else {
    const int ref = (L - 1) / 2;
    const int gr = grid[static_cast<size_t>(ref)];
    const long long S = static_cast<long long>(gr) * gr;
    const int K = cfg.dahead.sample_count;
    const int hidden = C / cfg.dahead.reduction;
    long long unify_elems = 0;
    for (int l = 0; l < L; ++l) unify_elems += static_cast<long long>(C) * gr * gr;
    put("head.unify", unify_elems);
    for (int b = 0; b < cfg.dahead.num_blocks; ++b) {
      std::string base = "head.block" + std::to_string(b);
      long long lsc = static_cast<long long>(L) * S * C;
      // pooled stats, L->L mix, gates, broadcast multiply
      put(base + ".scale", lsc + linear_flops(L, L) + 2LL * L + lsc);
      put(base + ".spatial.pred", conv_flops(gr, gr, 3 * K, C, 3));
      // K taps * L levels: sample, kernel weight, modulation, accumulate
      put(base + ".spatial.samples", 4LL * L * K * S * C);
      put(base + ".task",
          lsc + linear_flops(C, hidden) + linear_flops(hidden, 4 * C) + 3LL * lsc);
    }
    long long split_elems = 0;
    for (int l = 0; l < L; ++l) {
      split_elems += static_cast<long long>(C) * grid[static_cast<size_t>(l)] * grid[static_cast<size_t>(l)];
    }
    put("head.split", split_elems);
    for (int l = 0; l < L; ++l) {
      int g = grid[static_cast<size_t>(l)];
      put("head.pred" + std::to_string(l), conv_flops(g, g, out_ch, C, 1));
    }
  }
  return rep;
}

}  // namespace dabf
