#include "dabf/synth.hpp"

#include <algorithm>
#include <cmath>

#include "dabf/rng.hpp"

namespace dabf {

namespace {

struct Color {
  double r, g, b;
};

Color hat_color(Rng& rng) {
  return {rng.uniform(0.75, 0.95), rng.uniform(0.60, 0.80), rng.uniform(0.05, 0.20)};
}

Color person_color(Rng& rng) {
  return {rng.uniform(0.10, 0.25), rng.uniform(0.15, 0.35), rng.uniform(0.50, 0.75)};
}

// Clutter sits close to the target palettes so background and object
// colors genuinely compete.
Color clutter_color(Rng& rng) {
  if (rng.bernoulli(0.5)) {
    return {rng.uniform(0.65, 0.85), rng.uniform(0.55, 0.75), rng.uniform(0.15, 0.35)};
  }
  return {rng.uniform(0.15, 0.35), rng.uniform(0.20, 0.40), rng.uniform(0.40, 0.60)};
}

// Default stride bands of the detector; placement keeps every regression
// distance from the matched cell center safely positive.
int band_stride(double max_wh) {
  if (max_wh <= 16.0) return 8;
  if (max_wh <= 32.0) return 16;
  return 32;
}

bool center_fits_cell(double cx, double cy, double w, double h) {
  int s = band_stride(std::max(w, h));
  double ccx = (std::floor(cx / s) + 0.5) * s;
  double ccy = (std::floor(cy / s) + 0.5) * s;
  return std::abs(ccx - cx) <= w / 2 - 1.5 && std::abs(ccy - cy) <= h / 2 - 1.5;
}

bool inside_image(const BBox& b, int size) {
  return b.x1() >= 0.5 && b.y1() >= 0.5 && b.x2() <= size - 0.5 && b.y2() <= size - 0.5;
}

void fill_rect(std::vector<double>& img, int size, const BBox& b, Color c) {
  int x1 = std::max(0, static_cast<int>(std::floor(b.x1())));
  int y1 = std::max(0, static_cast<int>(std::floor(b.y1())));
  int x2 = std::min(size, static_cast<int>(std::ceil(b.x2())));
  int y2 = std::min(size, static_cast<int>(std::ceil(b.y2())));
  const double ch[3] = {c.r, c.g, c.b};
  for (int y = y1; y < y2; ++y) {
    for (int x = x1; x < x2; ++x) {
      double px = x + 0.5, py = y + 0.5;
      if (px < b.x1() || px > b.x2() || py < b.y1() || py > b.y2()) continue;
      for (int q = 0; q < 3; ++q) img[(static_cast<size_t>(q) * size + y) * size + x] = ch[q];
    }
  }
}

// Dome of radius w/2 over a full-width brim strip; the bounding box is
// tight by construction.
void fill_hat(std::vector<double>& img, int size, const BBox& b, Color c) {
  double r = b.w / 2;
  double dome_cy = b.y1() + r;
  double brim_top = b.y2() - std::max(1.5, b.h - r);
  const double ch[3] = {c.r, c.g, c.b};
  int x1 = std::max(0, static_cast<int>(std::floor(b.x1())));
  int y1 = std::max(0, static_cast<int>(std::floor(b.y1())));
  int x2 = std::min(size, static_cast<int>(std::ceil(b.x2())));
  int y2 = std::min(size, static_cast<int>(std::ceil(b.y2())));
  for (int y = y1; y < y2; ++y) {
    for (int x = x1; x < x2; ++x) {
      double px = x + 0.5, py = y + 0.5;
      if (px < b.x1() || px > b.x2() || py < b.y1() || py > b.y2()) continue;
      bool in_dome = py <= dome_cy &&
                     (px - b.cx) * (px - b.cx) + (py - dome_cy) * (py - dome_cy) <= r * r;
      bool in_brim = py >= brim_top;
      if (!in_dome && !in_brim) continue;
      for (int q = 0; q < 3; ++q) img[(static_cast<size_t>(q) * size + y) * size + x] = ch[q];
    }
  }
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, int index) {
  Rng rng(Rng::mix(spec.seed, static_cast<uint64_t>(index)));
  const int size = spec.image_size;

  std::vector<double> img(static_cast<size_t>(3) * size * size);
  Color base{rng.uniform(0.35, 0.55), rng.uniform(0.33, 0.52), rng.uniform(0.30, 0.50)};
  const double bch[3] = {base.r, base.g, base.b};
  for (int q = 0; q < 3; ++q) {
    for (int i = 0; i < size * size; ++i) {
      img[static_cast<size_t>(q) * size * size + i] = bch[q];
    }
  }

  for (int i = 0; i < spec.clutter; ++i) {
    double w = rng.uniform(5.0, 18.0), h = rng.uniform(5.0, 18.0);
    double cx = rng.uniform(w / 2, size - w / 2), cy = rng.uniform(h / 2, size - h / 2);
    fill_rect(img, size, BBox{cx, cy, w, h}, clutter_color(rng));
  }

  const int n_targets = rng.uniform_int(spec.min_targets, spec.max_targets);
  std::vector<GroundTruth> objects;
  for (int t = 0; t < n_targets; ++t) {
    int class_id = rng.bernoulli(0.5) ? 0 : 1;
    double w, h;
    if (class_id == 0) {
      w = rng.uniform(std::max(spec.min_size, 18.0), std::min(spec.max_size, 30.0));
      h = 0.75 * w;
    } else {
      h = rng.uniform(std::max(spec.min_size + 2.0, 20.0), spec.max_size);
      w = rng.uniform(0.45, 0.70) * h;
    }
    bool want_overlap = !objects.empty() && rng.bernoulli(spec.overlap_prob);
    BBox placed;
    bool ok = false;
    for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
      double cx, cy;
      if (want_overlap) {
        const BBox& anchor = objects[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(objects.size()) - 1))].box;
        double u = rng.uniform(0.55, 0.85);
        double dx = (anchor.w + w) / 2 * u * (rng.bernoulli(0.5) ? 1 : -1);
        double dy = rng.uniform(-0.2, 0.2) * (anchor.h + h) / 2;
        cx = anchor.cx + dx;
        cy = anchor.cy + dy;
      } else {
        cx = rng.uniform(w / 2 + 1, size - w / 2 - 1);
        cy = rng.uniform(h / 2 + 1, size - h / 2 - 1);
      }
      BBox cand{cx, cy, w, h};
      if (!inside_image(cand, size)) continue;
      if (!center_fits_cell(cx, cy, w, h)) continue;
      bool clash = false;
      for (const GroundTruth& prev : objects) {
        double pair_iou = iou_of(cand, prev.box);
        if (want_overlap) {
          if (pair_iou > 0.45) clash = true;  // keep suppression from merging pairs
        } else if (pair_iou > 0.0 ||
                   (std::abs(cand.cx - prev.box.cx) < (cand.w + prev.box.w) / 2 + 1.0 &&
                    std::abs(cand.cy - prev.box.cy) < (cand.h + prev.box.h) / 2 + 1.0)) {
          clash = true;
        }
        // one positive cell per ground truth: keep centers in distinct cells
        int s = band_stride(std::max(cand.w, cand.h));
        if (band_stride(std::max(prev.box.w, prev.box.h)) == s &&
            std::floor(cand.cx / s) == std::floor(prev.box.cx / s) &&
            std::floor(cand.cy / s) == std::floor(prev.box.cy / s)) {
          clash = true;
        }
      }
      if (clash) continue;
      if (want_overlap) {
        bool overlaps = false;
        for (const GroundTruth& prev : objects) overlaps |= iou_of(cand, prev.box) > 0.02;
        if (!overlaps) continue;
      }
      placed = cand;
      ok = true;
    }
    if (!ok) {
      // deterministic sweep over band cells; the first target always lands
      int s = band_stride(std::max(w, h));
      for (int cell_y = 0; cell_y < size / s && !ok; ++cell_y) {
        for (int cell_x = 0; cell_x < size / s && !ok; ++cell_x) {
          double cx = std::clamp((cell_x + 0.5) * s, w / 2 + 1, size - w / 2 - 1);
          double cy = std::clamp((cell_y + 0.5) * s, h / 2 + 1, size - h / 2 - 1);
          BBox cand{cx, cy, w, h};
          if (!inside_image(cand, size) || !center_fits_cell(cx, cy, w, h)) continue;
          bool clash = false;
          for (const GroundTruth& prev : objects) {
            if (iou_of(cand, prev.box) > 0.0) clash = true;
            int ps = band_stride(std::max(prev.box.w, prev.box.h));
            if (ps == s && std::floor(cand.cx / s) == std::floor(prev.box.cx / s) &&
                std::floor(cand.cy / s) == std::floor(prev.box.cy / s)) {
              clash = true;
            }
          }
          if (clash) continue;
          placed = cand;
          ok = true;
        }
      }
      if (!ok) continue;  // crowded image, drop this extra target
    }
    objects.push_back({class_id, placed});
    if (class_id == 0) {
      fill_hat(img, size, placed, hat_color(rng));
    } else {
      fill_rect(img, size, placed, person_color(rng));
    }
  }

  for (double& v : img) {
    v = std::clamp(v + rng.uniform(-spec.noise, spec.noise), 0.0, 1.0);
  }

  Scene scene;
  scene.image = Tensor::from(Shape{3, size, size}, std::move(img), false);
  scene.objects = std::move(objects);
  return scene;
}

}  // namespace dabf
