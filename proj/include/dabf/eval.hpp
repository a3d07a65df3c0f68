#pragma once

#include <vector>

#include "dabf/targets.hpp"

namespace dabf {

struct EvalResult {
  double precision = 0.0;  // at IoU 0.5 over the detection set as given
  double recall = 0.0;
  std::vector<double> ap50_per_class;
  double map50 = 0.0;
  double map5095 = 0.0;  // thresholds 0.50:0.05:0.95
};

/// Greedy matching, highest confidence first (ties by input order), one
/// match per ground truth, 101-point interpolated AP. Classes without any
/// ground truth are skipped in the class mean; an empty detection set
/// reports precision 0.
EvalResult evaluate(const std::vector<Detection>& detections,
                    const std::vector<std::vector<GroundTruth>>& gts_per_image, int num_classes);

}  // namespace dabf
