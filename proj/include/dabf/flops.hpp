#pragma once

#include <string>
#include <vector>

#include "dabf/model.hpp"

namespace dabf {

struct LayerFlops {
  std::string name;
  long long flops = 0;
};

/// Convention: conv/linear cost 2 FLOPs per multiply-accumulate
/// (MACs = H'·W'·C_out·C_in·K² resp. D·E); every other op (activations,
/// fusion, resampling, pooling, attention arithmetic) costs 1 FLOP per
/// produced element.
struct FlopsReport {
  std::vector<LayerFlops> layers;

  long long total() const {
    long long t = 0;
    for (const LayerFlops& l : layers) t += l.flops;
    return t;
  }
  double gflops() const { return static_cast<double>(total()) / 1e9; }
};

long long conv_flops(int out_h, int out_w, int c_out, int c_in, int k);
long long linear_flops(int d, int e);

/// One forward pass at cfg.input_size.
FlopsReport count_flops(const ModelConfig& cfg);

}  // namespace dabf
