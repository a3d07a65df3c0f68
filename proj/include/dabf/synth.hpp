#pragma once

#include <cstdint>
#include <vector>

#include "dabf/targets.hpp"
#include "dabf/tensor.hpp"

namespace dabf {

/// Synthetic construction-yard scenes: noisy background, clutter
/// rectangles in target-like colors, "hat" targets (a dome over a brim)
/// and "person" targets (tall rectangles). A pure function of
/// (seed, index).
struct SceneSpec {
  uint64_t seed = 42;
  int image_size = 64;
  int min_targets = 1;
  int max_targets = 4;
  double overlap_prob = 0.25;   // chance a target is placed against an earlier one
  double min_size = 18.0;       // bounds on max(w, h)
  double max_size = 40.0;
  int clutter = 3;              // distractor rectangles
  double noise = 0.03;
};

struct Scene {
  Tensor image;  // 3×H×W in [0,1]
  std::vector<GroundTruth> objects;
};

Scene generate_scene(const SceneSpec& spec, int index);

}  // namespace dabf
