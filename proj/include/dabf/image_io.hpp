#pragma once

#include <string>
#include <vector>

#include "dabf/targets.hpp"
#include "dabf/tensor.hpp"

namespace dabf {

/// Binary PPM (P6), maxval 255. Values clamp to [0,1] and round.
void write_ppm(const std::string& path, const Tensor& chw);
Tensor read_ppm(const std::string& path);

/// One `class cx cy w h` line per object, coordinates normalized to [0,1].
void write_labels(const std::string& path, const std::vector<GroundTruth>& gts, int image_size);
std::vector<GroundTruth> read_labels(const std::string& path, int image_size);

struct Sample {
  Tensor image;
  std::vector<GroundTruth> gts;
};
using Dataset = std::vector<Sample>;

/// Loads img_NNNNN.ppm / img_NNNNN.txt pairs in index order.
Dataset load_dataset(const std::string& dir);

}  // namespace dabf
