#include "dabf/targets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dabf {

int assign_level(double max_wh, const std::vector<int>& strides, double cutoff_base) {
  for (size_t l = 0; l + 1 < strides.size(); ++l) {
    if (max_wh <= cutoff_base * strides[l] / 8.0) return static_cast<int>(l);
  }
  return static_cast<int>(strides.size()) - 1;
}

AssignResult assign(const std::vector<GroundTruth>& gts, const std::vector<int>& strides,
                    int image_size, int num_classes) {
  return assign(gts, strides, image_size, num_classes, 16.0);
}

AssignResult assign(const std::vector<GroundTruth>& gts, const std::vector<int>& strides,
                    int image_size, int num_classes, double cutoff_base) {
  AssignResult out;
  out.cls_targets.resize(strides.size());
  std::vector<int> grid(strides.size());
  for (size_t l = 0; l < strides.size(); ++l) {
    grid[l] = image_size / strides[l];
    out.cls_targets[l].assign(static_cast<size_t>(num_classes) * grid[l] * grid[l], 0.0);
  }
  std::vector<std::vector<int>> taken(strides.size());
  for (size_t l = 0; l < strides.size(); ++l) taken[l].assign(static_cast<size_t>(grid[l]) * grid[l], -1);

  for (size_t gi = 0; gi < gts.size(); ++gi) {
    const GroundTruth& gt = gts[gi];
    if (gt.box.cx < 0 || gt.box.cx >= image_size || gt.box.cy < 0 || gt.box.cy >= image_size) {
      throw std::invalid_argument("assign: ground truth " + std::to_string(gi) +
                                  " has center outside the image");
    }
    if (gt.class_id < 0 || gt.class_id >= num_classes) {
      throw std::invalid_argument("assign: ground truth " + std::to_string(gi) +
                                  " has class " + std::to_string(gt.class_id));
    }
    int level = assign_level(std::max(gt.box.w, gt.box.h), strides, cutoff_base);
    int s = strides[static_cast<size_t>(level)];
    int cx = static_cast<int>(std::floor(gt.box.cx / s));
    int cy = static_cast<int>(std::floor(gt.box.cy / s));
    cx = std::min(cx, grid[static_cast<size_t>(level)] - 1);
    cy = std::min(cy, grid[static_cast<size_t>(level)] - 1);
    int cell = cy * grid[static_cast<size_t>(level)] + cx;
    if (taken[static_cast<size_t>(level)][static_cast<size_t>(cell)] >= 0) {
      out.dropped_gts.push_back(static_cast<int>(gi));
      continue;
    }
    taken[static_cast<size_t>(level)][static_cast<size_t>(cell)] = static_cast<int>(gi);
    double ccx = (cx + 0.5) * s, ccy = (cy + 0.5) * s;
    PositiveCell p;
    p.level = level;
    p.cy = cy;
    p.cx = cx;
    p.gt_index = static_cast<int>(gi);
    p.class_id = gt.class_id;
    p.ltrb = {ccx - gt.box.x1(), ccy - gt.box.y1(), gt.box.x2() - ccx, gt.box.y2() - ccy};
    out.positives.push_back(p);
    out.cls_targets[static_cast<size_t>(level)]
                   [(static_cast<size_t>(gt.class_id) * grid[static_cast<size_t>(level)] + cy) *
                        grid[static_cast<size_t>(level)] + cx] = 1.0;
  }
  return out;
}

std::vector<Tensor> activate_maps(const std::vector<Tensor>& raw_maps,
                                  const std::vector<int>& strides) {
  std::vector<Tensor> out;
  out.reserve(raw_maps.size());
  for (size_t l = 0; l < raw_maps.size(); ++l) {
    const Tensor& m = raw_maps[l];
    const int ch = m.dim(0), h = m.dim(1), w = m.dim(2);
    std::vector<double> d(m.data());
    const double s = static_cast<double>(strides[l]);
    for (int c = 0; c < ch; ++c) {
      for (long long i = 0; i < static_cast<long long>(h) * w; ++i) {
        double& v = d[static_cast<size_t>(c) * h * w + i];
        if (c < 4) {
          v = (std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)))) * s;  // softplus * stride
        } else {
          v = 1.0 / (1.0 + std::exp(-v));
        }
      }
    }
    out.push_back(Tensor::from(m.shape(), std::move(d), false));
  }
  return out;
}

std::vector<Tensor> targets_to_maps(const AssignResult& ar, const std::vector<int>& strides,
                                    int image_size, int num_classes) {
  std::vector<Tensor> maps;
  for (size_t l = 0; l < strides.size(); ++l) {
    int g = image_size / strides[l];
    maps.push_back(Tensor::zeros(Shape{4 + num_classes, g, g}));
  }
  for (const PositiveCell& p : ar.positives) {
    Tensor& m = maps[static_cast<size_t>(p.level)];
    int g = m.dim(1);
    auto& d = m.impl()->data;  // leaves, filled before any graph use
    for (int k = 0; k < 4; ++k) {
      d[(static_cast<size_t>(k) * g + p.cy) * g + p.cx] = p.ltrb[static_cast<size_t>(k)];
    }
    d[(static_cast<size_t>(4 + p.class_id) * g + p.cy) * g + p.cx] = 1.0;
  }
  return maps;
}

std::vector<Detection> decode_and_nms(const std::vector<Tensor>& decoded_maps,
                                      const std::vector<int>& strides, double conf_thresh,
                                      double nms_iou) {
  if (conf_thresh < 0 || conf_thresh > 1 || nms_iou < 0 || nms_iou > 1) {
    throw std::invalid_argument("decode_and_nms: thresholds must be in [0,1]");
  }
  std::vector<Detection> all;
  for (size_t l = 0; l < decoded_maps.size(); ++l) {
    const Tensor& m = decoded_maps[l];
    const int ch = m.dim(0), h = m.dim(1), w = m.dim(2);
    const int nc = ch - 4;
    const auto& d = m.data();
    const double s = static_cast<double>(strides[l]);
    auto at = [&](int c, int y, int x) { return d[(static_cast<size_t>(c) * h + y) * w + x]; };
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < nc; ++c) {
          double conf = at(4 + c, y, x);
          if (conf <= conf_thresh) continue;
          double ccx = (x + 0.5) * s, ccy = (y + 0.5) * s;
          double x1 = ccx - at(0, y, x), y1 = ccy - at(1, y, x);
          double x2 = ccx + at(2, y, x), y2 = ccy + at(3, y, x);
          all.push_back({c, BBox::from_corners(x1, y1, x2, y2), conf, -1});
        }
      }
    }
  }
  // rank by confidence, ties by insertion
  std::vector<size_t> order(all.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return all[a].confidence > all[b].confidence; });
  std::vector<bool> suppressed(all.size(), false);
  std::vector<Detection> kept;
  for (size_t oi = 0; oi < order.size(); ++oi) {
    size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(all[i]);
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      size_t j = order[oj];
      if (suppressed[j] || all[j].class_id != all[i].class_id) continue;
      if (iou_of(all[i].box, all[j].box) > nms_iou) suppressed[j] = true;
    }
  }
  return kept;
}

}  // namespace dabf
