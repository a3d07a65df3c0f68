#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dabf/bwfpn.hpp"
#include "dabf/rng.hpp"
#include "dabf/tensor.hpp"

namespace dabf {

/// Pyramid levels resized to one shared grid and stacked into L×S×C,
/// where S = ref_h * ref_w at the reference (median) level.
struct UnifiedFeature {
  Tensor f;  // L×S×C
  int reference_level = 0;
  int ref_h = 0, ref_w = 0;

  int num_levels() const { return f.dim(0); }
  int spatial() const { return f.dim(1); }
  int channels() const { return f.dim(2); }
};

struct DaHeadConfig {
  int num_blocks = 2;
  int sample_count = 9;  // K = k*k for odd k
  int reduction = 4;     // channel bottleneck of the task branch

  void validate(int channels) const;
};

struct ScaleAttentionParams {
  Tensor weight;  // L×L mix across levels of the pooled statistics
  Tensor bias;    // L
};

struct SpatialAttentionParams {
  Tensor pred_w;  // 3K×C×3×3: per location 2K offsets + K modulation logits
  Tensor pred_b;  // 3K
  Tensor omega;   // L×K sampling kernel, one scalar per (level, tap)
};

struct TaskAttentionParams {
  Tensor w1, b1;  // C -> C/r
  Tensor w2, b2;  // C/r -> 4C
};

struct DaHeadBlockParams {
  ScaleAttentionParams scale;
  SpatialAttentionParams spatial;
  TaskAttentionParams task;
};

/// Levels resized (nearest) to the median level's grid, flattened to S×C
/// and stacked. Requires >= 2 levels sharing a channel count.
UnifiedFeature unify(const FeaturePyramid& pyramid);

/// Per-level scalar gates in [0,1]: pooled mean over S and C, an L->L mix,
/// relu, hard-sigmoid, broadcast multiply.
Tensor scale_attention(const UnifiedFeature& u, const ScaleAttentionParams& p);

/// Sparse deformable sampling: K offset taps per level around each
/// location, modulated and averaged over levels; offsets and modulation
/// logits come from a 3x3 conv over the reference-level slice. The
/// level-aggregated map is broadcast back to every level slot.
Tensor spatial_attention(const UnifiedFeature& u, const SpatialAttentionParams& p, int sample_count);

/// Channel-wise piecewise-linear gate max(a1*F+b1, a2*F+b2) with
/// coefficients from globally pooled features; zero init reproduces ReLU.
Tensor task_attention(const UnifiedFeature& u, const TaskAttentionParams& p, int reduction);

/// task(spatial(scale(F))): level, then space, then channel.
Tensor dahead_block(const UnifiedFeature& u, const DaHeadBlockParams& p, const DaHeadConfig& cfg);

/// The full head: unify, stacked attention blocks, per-level re-split and
/// 1x1 prediction convs producing (4 + num_classes) channels.
class DynamicHead {
 public:
  DynamicHead(int levels, int channels, int num_classes, DaHeadConfig cfg, Rng& init_rng);

  std::vector<Tensor> forward(const FeaturePyramid& pyramid) const;

  std::vector<DaHeadBlockParams>& blocks() { return blocks_; }
  const DaHeadConfig& config() const { return cfg_; }
  void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);

 private:
  DaHeadConfig cfg_;
  int levels_, channels_, num_classes_;
  std::vector<DaHeadBlockParams> blocks_;
  std::vector<Tensor> pred_w_;  // per level (4+nc)×C×1×1
  std::vector<Tensor> pred_b_;
};

/// Fresh block parameters at the documented init: zeroed attention
/// predictors (0.5 level gates, zero offsets, 0.5 modulation, ReLU channel
/// map) and a center-tap sampling kernel.
DaHeadBlockParams make_dahead_block_params(int levels, int channels, const DaHeadConfig& cfg,
                                           Rng& rng);

/// Splits the unified tensor back into per-level C×H_i×W_i maps (inverse
/// of unify, exact at the reference level).
std::vector<Tensor> split_levels(const UnifiedFeature& u, const FeaturePyramid& pyramid);

}  // namespace dabf
