#include "dabf/model.hpp"

#include <cmath>
#include <stdexcept>

#include "dabf/ops.hpp"
#include "dabf/rng.hpp"

namespace dabf {

HeadKind parse_head(const std::string& name) {
  if (name == "plain") return HeadKind::kPlain;
  if (name == "dahead") return HeadKind::kDahead;
  throw std::invalid_argument("unknown head '" + name + "' (expected plain|dahead)");
}

std::string head_name(HeadKind k) {
  return k == HeadKind::kPlain ? "plain" : "dahead";
}

std::vector<int> ModelConfig::strides() const {
  const int stages = static_cast<int>(stage_widths.size());
  std::vector<int> out;
  for (int i = stages - num_levels; i < stages; ++i) out.push_back(1 << (i + 2));
  return out;
}

int ModelConfig::largest_stride() const { return strides().back(); }

void ModelConfig::validate() const {
  if (stage_widths.empty()) throw std::invalid_argument("model: no stages");
  if (num_levels < 2 || num_levels > static_cast<int>(stage_widths.size())) {
    throw std::invalid_argument("model: num_levels must be in [2, stages]");
  }
  if (input_size % largest_stride() != 0) {
    throw std::invalid_argument("model: input_size " + std::to_string(input_size) +
                                " not divisible by largest stride " +
                                std::to_string(largest_stride()));
  }
  if (num_classes < 1) throw std::invalid_argument("model: num_classes must be >= 1");
  dahead.validate(neck_channels);
}

namespace {

Conv2dLayer make_conv(Rng& rng, int out_c, int in_c, int k, int stride, int padding) {
  std::vector<double> w(static_cast<size_t>(out_c) * in_c * k * k);
  double scale = std::sqrt(2.0 / static_cast<double>(in_c * k * k));
  for (double& v : w) v = rng.normal() * scale;
  Conv2dLayer l;
  l.w = Tensor::from(Shape{out_c, in_c, k, k}, std::move(w), true);
  l.b = Tensor::zeros(Shape{out_c}, true);
  l.stride = stride;
  l.padding = padding;
  return l;
}

}  // namespace

Model::Model(const ModelConfig& cfg, uint64_t param_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(Rng::mix(param_seed, 0x6d6f64656cULL));
  const int stages = static_cast<int>(cfg_.stage_widths.size());

  stem_ = make_conv(rng, cfg_.stem_width, 3, 3, 2, 1);
  int prev = cfg_.stem_width;
  for (int i = 0; i < stages; ++i) {
    int w = cfg_.stage_widths[static_cast<size_t>(i)];
    downs_.push_back(make_conv(rng, w, prev, 3, 2, 1));
    blocks_.push_back({make_conv(rng, w, w, 3, 1, 1), make_conv(rng, w, w, 3, 1, 1)});
    prev = w;
  }
  if (cfg_.sppf) {
    sppf_fuse_ = make_conv(rng, prev, prev * 4, 1, 1, 0);
  }
  for (int l = 0; l < cfg_.num_levels; ++l) {
    int tap_w = cfg_.stage_widths[static_cast<size_t>(stages - cfg_.num_levels + l)];
    laterals_.push_back(make_conv(rng, cfg_.neck_channels, tap_w, 1, 1, 0));
  }
  neck_ = std::make_unique<Neck>(build_topology(cfg_.neck, cfg_.num_levels, cfg_.neck_layers),
                                 cfg_.neck_channels, rng);
  if (cfg_.head == HeadKind::kDahead) {
    dahead_ = std::make_unique<DynamicHead>(cfg_.num_levels, cfg_.neck_channels, cfg_.num_classes,
                                            cfg_.dahead, rng);
  } else {
    for (int l = 0; l < cfg_.num_levels; ++l) {
      Conv2dLayer head = make_conv(rng, 4 + cfg_.num_classes, cfg_.neck_channels, 1, 1, 0);
      // class channels start at a low-confidence prior
      auto& b = head.b.leaf_data();
      for (int c = 4; c < 4 + cfg_.num_classes; ++c) b[static_cast<size_t>(c)] = -2.0;
      plain_head_.push_back(std::move(head));
    }
  }
}

Tensor Model::run_conv(const Conv2dLayer& l, const Tensor& chw, bool act) const {
  Tensor x = reshape(chw, Shape{1, chw.dim(0), chw.dim(1), chw.dim(2)});
  Tensor y = conv2d(x, l.w, l.b, l.stride, l.padding);
  Tensor out = reshape(y, Shape{y.dim(1), y.dim(2), y.dim(3)});
  return act ? relu(out) : out;
}

FeaturePyramid Model::features(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("model: image must be 3×H×W, got " + shape_str(image.shape()));
  }
  const int stages = static_cast<int>(cfg_.stage_widths.size());
  Tensor x = run_conv(stem_, image, true);
  std::vector<Tensor> taps;
  for (int i = 0; i < stages; ++i) {
    x = run_conv(downs_[static_cast<size_t>(i)], x, true);
    Tensor r = run_conv(blocks_[static_cast<size_t>(i)][0], x, true);
    r = run_conv(blocks_[static_cast<size_t>(i)][1], r, false);
    x = relu(add(x, r));
    bool tapped = i >= stages - cfg_.num_levels;
    if (i == stages - 1 && cfg_.sppf) {
      Tensor p1 = maxpool2d(x, 5, 1, 2);
      Tensor p2 = maxpool2d(p1, 5, 1, 2);
      Tensor p3 = maxpool2d(p2, 5, 1, 2);
      x = relu(run_conv(sppf_fuse_, concat0({x, p1, p2, p3}), false));
    }
    if (tapped) taps.push_back(x);
  }
  FeaturePyramid p;
  p.strides = cfg_.strides();
  for (int l = 0; l < cfg_.num_levels; ++l) {
    p.levels.push_back(run_conv(laterals_[static_cast<size_t>(l)], taps[static_cast<size_t>(l)], false));
  }
  return neck_->run(p);
}

std::vector<Tensor> Model::forward(const Tensor& image) const {
  FeaturePyramid p = features(image);
  if (dahead_) return dahead_->forward(p);
  std::vector<Tensor> maps;
  for (int l = 0; l < cfg_.num_levels; ++l) {
    maps.push_back(run_conv(plain_head_[static_cast<size_t>(l)], p.levels[static_cast<size_t>(l)], false));
  }
  return maps;
}

void Model::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("stem.w", stem_.w);
  fn("stem.b", stem_.b);
  for (size_t i = 0; i < downs_.size(); ++i) {
    std::string base = "stage" + std::to_string(i);
    fn(base + ".down.w", downs_[i].w);
    fn(base + ".down.b", downs_[i].b);
    fn(base + ".res0.w", blocks_[i][0].w);
    fn(base + ".res0.b", blocks_[i][0].b);
    fn(base + ".res1.w", blocks_[i][1].w);
    fn(base + ".res1.b", blocks_[i][1].b);
  }
  if (cfg_.sppf) {
    fn("sppf.w", sppf_fuse_.w);
    fn("sppf.b", sppf_fuse_.b);
  }
  for (size_t l = 0; l < laterals_.size(); ++l) {
    fn("lateral" + std::to_string(l) + ".w", laterals_[l].w);
    fn("lateral" + std::to_string(l) + ".b", laterals_[l].b);
  }
  neck_->for_each_param(fn);
  if (dahead_) {
    dahead_->for_each_param(fn);
  } else {
    for (size_t l = 0; l < plain_head_.size(); ++l) {
      fn("head.pred" + std::to_string(l) + ".w", plain_head_[l].w);
      fn("head.pred" + std::to_string(l) + ".b", plain_head_[l].b);
    }
  }
}

}  // namespace dabf
