#pragma once

#include <map>
#include <string>

#include "dabf/box_losses.hpp"
#include "dabf/model.hpp"
#include "dabf/synth.hpp"

namespace dabf {

/// Configuration-level failure (bad file, unknown key, invalid value):
/// maps to exit code 1 at the command line.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int batch_size = 16;
  int epochs = 60;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  uint64_t seed = 42;
  double lambda_box = 1.0;
  double lambda_cls = 1.0;
  double conf_thresh = 0.25;
  double nms_iou = 0.5;
  BoxLossState loss_state;
};

/// Flat `key = value` file, UTF-8, '#' comments. Unknown keys are
/// rejected. Every run echoes the fully-resolved form next to its
/// outputs.
class RunConfig {
 public:
  RunConfig();  // defaults only
  static RunConfig from_file(const std::string& path);
  static RunConfig from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);  // validates the key
  std::string get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  SceneSpec scene_spec() const;

  /// Canonical serialization: every key, sorted, one per line.
  std::string resolved() const;
  void write_resolved(const std::string& dir) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace dabf
