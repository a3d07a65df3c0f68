#include "dabf/dahead.hpp"

#include <cmath>
#include <stdexcept>

#include "dabf/ops.hpp"

namespace dabf {

void DaHeadConfig::validate(int channels) const {
  if (num_blocks < 1) throw std::invalid_argument("dahead: num_blocks must be >= 1");
  int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(sample_count))));
  if (k * k != sample_count || k % 2 == 0) {
    throw std::invalid_argument("dahead: sample_count must be an odd square, got " +
                                std::to_string(sample_count));
  }
  if (reduction < 1 || channels % reduction != 0) {
    throw std::invalid_argument("dahead: channels " + std::to_string(channels) +
                                " not divisible by reduction " + std::to_string(reduction));
  }
}

UnifiedFeature unify(const FeaturePyramid& pyramid) {
  pyramid.validate();
  const int L = pyramid.num_levels();
  if (L < 2) throw std::invalid_argument("unify: need at least 2 levels, got " + std::to_string(L));
  const int ref = (L - 1) / 2;  // median; lower one for even L
  const int rh = pyramid.levels[static_cast<size_t>(ref)].dim(1);
  const int rw = pyramid.levels[static_cast<size_t>(ref)].dim(2);
  const int c = pyramid.channels();

  std::vector<Tensor> slices;
  slices.reserve(static_cast<size_t>(L));
  for (int l = 0; l < L; ++l) {
    Tensor r = resize_to(pyramid.levels[static_cast<size_t>(l)], rh, rw);
    slices.push_back(transpose2d(reshape(r, Shape{c, rh * rw})));  // S×C
  }
  UnifiedFeature u;
  u.f = stack0(slices);
  u.reference_level = ref;
  u.ref_h = rh;
  u.ref_w = rw;
  return u;
}

Tensor scale_attention(const UnifiedFeature& u, const ScaleAttentionParams& p) {
  const int L = u.num_levels();
  Tensor pooled = reduce_mean(u.f, {1, 2});               // [L]
  Tensor mixed = linear(reshape(pooled, Shape{1, L}), p.weight, p.bias);
  Tensor gates = hard_sigmoid(relu(mixed));               // [1,L] in [0,1]
  return mul(u.f, reshape(gates, Shape{L, 1, 1}));
}

namespace {

// Level slice back to its C×H×W grid view.
Tensor level_grid(const UnifiedFeature& u, int l) {
  Tensor sc = index_select0(u.f, l);                       // S×C
  return reshape(transpose2d(sc), Shape{u.channels(), u.ref_h, u.ref_w});
}

}  // namespace

Tensor spatial_attention(const UnifiedFeature& u, const SpatialAttentionParams& p,
                         int sample_count) {
  const int L = u.num_levels();
  const int C = u.channels();
  const int S = u.spatial();
  const int K = sample_count;
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(K))));
  const int half = k / 2;
  if (p.omega.rank() != 2 || p.omega.dim(0) != L || p.omega.dim(1) != K) {
    throw std::invalid_argument("spatial_attention: omega shape " + shape_str(p.omega.shape()) +
                                " does not match L=" + std::to_string(L) + " K=" + std::to_string(K));
  }

  // Offsets and modulation logits from the reference-level slice.
  Tensor ref = level_grid(u, u.reference_level);
  Tensor pred = conv2d(reshape(ref, Shape{1, C, u.ref_h, u.ref_w}), p.pred_w, p.pred_b, 1, 1);
  Tensor flat = reshape(pred, Shape{3 * K * S});  // rows of S: 2K offsets then K logits

  // Base grid coordinates (y, x) per flattened location, row-major.
  std::vector<double> base_y(static_cast<size_t>(S)), base_x(static_cast<size_t>(S));
  for (int y = 0; y < u.ref_h; ++y) {
    for (int x = 0; x < u.ref_w; ++x) {
      base_y[static_cast<size_t>(y) * u.ref_w + x] = static_cast<double>(y);
      base_x[static_cast<size_t>(y) * u.ref_w + x] = static_cast<double>(x);
    }
  }

  std::vector<Tensor> grids;
  grids.reserve(static_cast<size_t>(L));
  for (int l = 0; l < L; ++l) grids.push_back(level_grid(u, l));

  Tensor acc;  // S×C
  for (int tap = 0; tap < K; ++tap) {
    int gy = tap / k - half, gx = tap % k - half;
    std::vector<double> by(base_y), bx(base_x);
    for (int s = 0; s < S; ++s) {
      by[static_cast<size_t>(s)] += gy;
      bx[static_cast<size_t>(s)] += gx;
    }
    Tensor off_y = add(slice1d(flat, 2 * tap * S, S), Tensor::from(Shape{S}, by));
    Tensor off_x = add(slice1d(flat, (2 * tap + 1) * S, S), Tensor::from(Shape{S}, bx));
    Tensor points = transpose2d(stack0({off_y, off_x}));  // S×2
    Tensor mod = sigmoid(slice1d(flat, (2 * K + tap) * S, S));
    Tensor mod_col = reshape(mod, Shape{S, 1});
    for (int l = 0; l < L; ++l) {
      Tensor sampled = transpose2d(bilinear_sample(grids[static_cast<size_t>(l)], points));  // S×C
      Tensor weighted = mul(sampled, reshape(index_flat(p.omega, static_cast<long long>(l) * K + tap), Shape{1, 1}));
      Tensor term = mul(weighted, mod_col);
      acc = acc.defined() ? add(acc, term) : term;
    }
  }
  Tensor level_mean = mul_scalar(acc, 1.0 / static_cast<double>(L));  // S×C

  // The aggregation collapses the level axis; the result fills every slot.
  std::vector<Tensor> copies(static_cast<size_t>(L), level_mean);
  return stack0(copies);
}

Tensor task_attention(const UnifiedFeature& u, const TaskAttentionParams& p, int reduction) {
  const int C = u.channels();
  if (C % reduction != 0) {
    throw std::invalid_argument("task_attention: channels " + std::to_string(C) +
                                " not divisible by reduction " + std::to_string(reduction));
  }
  Tensor pooled = reduce_mean(u.f, {0, 1});  // [C]
  Tensor hidden = relu(linear(reshape(pooled, Shape{1, C}), p.w1, p.b1));
  Tensor raw = linear(hidden, p.w2, p.b2);  // [1, 4C]
  // normalize to [-1, 1]
  Tensor units = reshape(add_scalar(mul_scalar(hard_sigmoid(raw), 2.0), -1.0), Shape{4 * C});
  Tensor a1 = add_scalar(slice1d(units, 0, C), 1.0);
  Tensor a2 = slice1d(units, C, C);
  Tensor b1 = slice1d(units, 2 * C, C);
  Tensor b2 = slice1d(units, 3 * C, C);
  // per-channel vectors broadcast over L×S
  Tensor branch1 = add(mul(u.f, a1), b1);
  Tensor branch2 = add(mul(u.f, a2), b2);
  return maximum(branch1, branch2);
}

Tensor dahead_block(const UnifiedFeature& u, const DaHeadBlockParams& p, const DaHeadConfig& cfg) {
  UnifiedFeature cur = u;
  cur.f = scale_attention(cur, p.scale);
  cur.f = spatial_attention(cur, p.spatial, cfg.sample_count);
  cur.f = task_attention(cur, p.task, cfg.reduction);
  return cur.f;
}

DaHeadBlockParams make_dahead_block_params(int levels, int channels, const DaHeadConfig& cfg,
                                           Rng& rng) {
  DaHeadBlockParams p;
  const int L = levels, C = channels, K = cfg.sample_count;
  // Zero init: every level gate starts at hard_sigmoid(relu(0)) = 0.5.
  p.scale.weight = Tensor::zeros(Shape{L, L}, true);
  p.scale.bias = Tensor::zeros(Shape{L}, true);
  // Zero init: offsets 0, modulation sigmoid(0) = 0.5.
  p.spatial.pred_w = Tensor::zeros(Shape{3 * K, C, 3, 3}, true);
  p.spatial.pred_b = Tensor::zeros(Shape{3 * K}, true);
  // Center-tap stencil scaled to 4 so the whole block starts at unit gain
  // (the 0.5 level gates and 0.5 modulation would otherwise shrink the
  // features by 4x per block and leave the prediction convs bias-bound).
  {
    std::vector<double> om(static_cast<size_t>(L) * K, 0.0);
    for (int l = 0; l < L; ++l) om[static_cast<size_t>(l) * K + K / 2] = 4.0;
    p.spatial.omega = Tensor::from(Shape{L, K}, std::move(om), true);
  }
  // First task linear random, final linear zero: the channel map starts
  // exactly as ReLU.
  const int hidden = C / cfg.reduction;
  {
    std::vector<double> w(static_cast<size_t>(C) * hidden);
    double scale = std::sqrt(2.0 / static_cast<double>(C));
    for (double& v : w) v = rng.normal() * scale;
    p.task.w1 = Tensor::from(Shape{C, hidden}, std::move(w), true);
    p.task.b1 = Tensor::zeros(Shape{hidden}, true);
    p.task.w2 = Tensor::zeros(Shape{hidden, 4 * C}, true);
    p.task.b2 = Tensor::zeros(Shape{4 * C}, true);
  }
  return p;
}

std::vector<Tensor> split_levels(const UnifiedFeature& u, const FeaturePyramid& pyramid) {
  const int L = u.num_levels();
  if (pyramid.num_levels() != L) {
    throw std::invalid_argument("split_levels: pyramid level count " +
                                std::to_string(pyramid.num_levels()) + " does not match " +
                                std::to_string(L));
  }
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(L));
  for (int l = 0; l < L; ++l) {
    Tensor grid = level_grid(u, l);
    out.push_back(resize_to(grid, pyramid.levels[static_cast<size_t>(l)].dim(1),
                            pyramid.levels[static_cast<size_t>(l)].dim(2)));
  }
  return out;
}

DynamicHead::DynamicHead(int levels, int channels, int num_classes, DaHeadConfig cfg, Rng& init_rng)
    : cfg_(cfg), levels_(levels), channels_(channels), num_classes_(num_classes) {
  cfg_.validate(channels);
  for (int b = 0; b < cfg_.num_blocks; ++b) {
    blocks_.push_back(make_dahead_block_params(levels_, channels_, cfg_, init_rng));
  }
  const int out_ch = 4 + num_classes_;
  for (int l = 0; l < levels_; ++l) {
    std::vector<double> w(static_cast<size_t>(out_ch) * channels_);
    double scale = std::sqrt(2.0 / static_cast<double>(channels_));
    for (double& v : w) v = init_rng.normal() * scale;
    pred_w_.push_back(Tensor::from(Shape{out_ch, channels_, 1, 1}, std::move(w), true));
    // class channels start at a low-confidence prior
    std::vector<double> b(static_cast<size_t>(out_ch), 0.0);
    for (int c = 4; c < out_ch; ++c) b[static_cast<size_t>(c)] = -2.0;
    pred_b_.push_back(Tensor::from(Shape{out_ch}, std::move(b), true));
  }
}

std::vector<Tensor> DynamicHead::forward(const FeaturePyramid& pyramid) const {
  UnifiedFeature u = unify(pyramid);
  for (const DaHeadBlockParams& p : blocks_) u.f = dahead_block(u, p, cfg_);
  std::vector<Tensor> maps = split_levels(u, pyramid);
  for (int l = 0; l < levels_; ++l) {
    Tensor m = maps[static_cast<size_t>(l)];
    Tensor as_nchw = reshape(m, Shape{1, channels_, m.dim(1), m.dim(2)});
    Tensor logits = conv2d(as_nchw, pred_w_[static_cast<size_t>(l)], pred_b_[static_cast<size_t>(l)], 1, 0);
    maps[static_cast<size_t>(l)] = reshape(logits, Shape{4 + num_classes_, m.dim(1), m.dim(2)});
  }
  return maps;
}

void DynamicHead::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
  for (size_t b = 0; b < blocks_.size(); ++b) {
    std::string base = "head.block" + std::to_string(b);
    fn(base + ".scale.w", blocks_[b].scale.weight);
    fn(base + ".scale.b", blocks_[b].scale.bias);
    fn(base + ".spatial.pred_w", blocks_[b].spatial.pred_w);
    fn(base + ".spatial.pred_b", blocks_[b].spatial.pred_b);
    fn(base + ".spatial.omega", blocks_[b].spatial.omega);
    fn(base + ".task.w1", blocks_[b].task.w1);
    fn(base + ".task.b1", blocks_[b].task.b1);
    fn(base + ".task.w2", blocks_[b].task.w2);
    fn(base + ".task.b2", blocks_[b].task.b2);
  }
  for (size_t l = 0; l < pred_w_.size(); ++l) {
    fn("head.pred" + std::to_string(l) + ".w", pred_w_[l]);
    fn("head.pred" + std::to_string(l) + ".b", pred_b_[l]);
  }
}

}  // namespace dabf
