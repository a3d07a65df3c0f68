#pragma once

#include <string>
#include <vector>

#include "dabf/eval.hpp"
#include "dabf/image_io.hpp"
#include "dabf/model.hpp"
#include "dabf/runconfig.hpp"

namespace dabf {

struct LossParts {
  Tensor total;                      // scalar, graph-connected
  std::vector<double> liou_batch;    // detached per-box IoU losses
  int num_positives = 0;
};

/// Box term averaged over positive cells (selected variant), plus
/// positive- and negative-balanced binary cross-entropy over the class
/// maps.
LossParts detection_loss(const Model& model, const Sample& sample, const TrainConfig& tc,
                         const BoxLossState& state);

struct EpochRow {
  int epoch = 0;
  double loss = 0, precision = 0, recall = 0, map50 = 0, map5095 = 0;
};

struct TrainResult {
  std::vector<EpochRow> rows;
  std::string metrics_path;
  std::string checkpoint_path;
};

/// SGD with momentum and lr-scaled decoupled weight decay:
/// v <- mu*v + g;  w <- w - lr*v - lr*wd*w.
class Sgd {
 public:
  Sgd(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}
  void step(std::vector<Tensor>& params);

 private:
  double lr_, momentum_, weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

/// Deterministic full training loop; writes metrics.csv and model.ckpt
/// under out_dir. Per-epoch metrics are computed from an f32 round-trip
/// of the parameters so a later eval of the checkpoint reproduces the
/// final row byte for byte. Aborts on a non-finite loss, naming the first
/// offending graph node.
TrainResult train_model(Model& model, const Dataset& train, const Dataset& val,
                        const TrainConfig& tc, const std::string& out_dir);

/// Decoded forward + suppression + matching on a dataset.
EvalResult eval_model(Model& model, const Dataset& val, const TrainConfig& tc);

std::string format_metrics_row(const EpochRow& r);
constexpr const char* kMetricsHeader = "epoch,loss,precision,recall,map50,map5095\n";

}  // namespace dabf
