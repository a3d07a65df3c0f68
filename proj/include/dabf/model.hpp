#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dabf/bwfpn.hpp"
#include "dabf/dahead.hpp"
#include "dabf/tensor.hpp"

namespace dabf {

enum class HeadKind { kPlain, kDahead };
HeadKind parse_head(const std::string& name);  // plain|dahead
std::string head_name(HeadKind k);

struct ModelConfig {
  int input_size = 64;
  int stem_width = 4;
  std::vector<int> stage_widths = {8, 16, 24, 32};  // stride doubles per stage
  int neck_channels = 24;
  int num_levels = 3;  // pyramid taps the last num_levels stages
  NeckKind neck = NeckKind::kBwfpn;
  int neck_layers = 1;
  HeadKind head = HeadKind::kDahead;
  int num_classes = 2;
  DaHeadConfig dahead;
  bool sppf = false;
  double size_cutoff_base = 16.0;  // assignment band: max(w,h) <= base*stride/8

  std::vector<int> strides() const;
  int largest_stride() const;
  void validate() const;
};

struct Conv2dLayer {
  Tensor w, b;
  int stride = 1, padding = 1;
};

/// Tiny anchor-free detector: stem + stride-2 stages with one residual
/// block each, optional chained-maxpool context block on the last stage,
/// 1x1 laterals into the fusion neck, then a plain or attention head.
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t param_seed);

  /// Raw per-level maps, (4+num_classes)×H_l×W_l, for one 3×H×W image.
  std::vector<Tensor> forward(const Tensor& image) const;
  FeaturePyramid features(const Tensor& image) const;

  const ModelConfig& config() const { return cfg_; }
  void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);

  DynamicHead* dahead() { return dahead_.get(); }
  Neck& neck() { return *neck_; }

 private:
  Tensor run_conv(const Conv2dLayer& l, const Tensor& chw, bool act) const;

  ModelConfig cfg_;
  Conv2dLayer stem_;
  std::vector<Conv2dLayer> downs_;                // one per stage
  std::vector<std::array<Conv2dLayer, 2>> blocks_;  // residual pair per stage
  Conv2dLayer sppf_fuse_;                         // 1x1 over concatenated pools
  std::vector<Conv2dLayer> laterals_;             // per tapped level
  std::unique_ptr<Neck> neck_;
  std::unique_ptr<DynamicHead> dahead_;
  std::vector<Conv2dLayer> plain_head_;           // per level 1x1 -> 4+nc
};

}  // namespace dabf
