#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dabf/rng.hpp"
#include "dabf/tensor.hpp"

namespace dabf {

/// Ordered multi-resolution features, one C×H×W tensor per stride level.
struct FeaturePyramid {
  std::vector<Tensor> levels;
  std::vector<int> strides;

  int num_levels() const { return static_cast<int>(levels.size()); }
  int channels() const { return levels.empty() ? 0 : levels[0].dim(0); }
  void validate() const;  // shared channel count, strictly increasing strides
};

enum class NeckKind { kFpn, kPanet, kBwfpn };
NeckKind parse_neck(const std::string& name);  // fpn|panet|bwfpn
std::string neck_name(NeckKind k);

struct FusionEdge {
  enum class Src { kInput, kNode };
  enum class Resample { kNone, kUp, kDown };
  Src src = Src::kInput;
  int index = 0;  // level index or node index within the layer
  Resample resample = Resample::kNone;
};

struct FusionNodeSpec {
  std::string name;  // td{i} / out{i}
  std::vector<FusionEdge> inputs;
  int out_level = -1;  // level this node feeds as layer output, -1 if intermediate
};

/// One fusion layer's wiring plus stacking depth. The bidirectional kind
/// obeys three structural rules: no single-input nodes, an extra edge
/// from the original level input on every interior output node, and
/// whole-layer stackability.
struct FusionTopology {
  NeckKind kind = NeckKind::kBwfpn;
  int num_levels = 3;
  int num_layers = 1;
  bool weighted = false;  // learnable weights + eps normalization
  std::vector<FusionNodeSpec> nodes;           // topological order
  std::vector<int> output_node;                // per level; -1 = passthrough input

  /// Flow edges as (source name, node name) pairs; inputs are "in{i}".
  std::vector<std::pair<std::string, std::string>> flow_edges() const;
};

FusionTopology build_topology(NeckKind kind, int num_levels, int num_layers);

/// relu(w_i) / (eps + sum relu(w_j)) for each i; the normalization the
/// weighted fusion nodes apply.
std::vector<double> normalized_fusion_weights(const std::vector<double>& raw, double eps);

constexpr double kFusionEps = 1e-4;

struct FusionNodeParams {
  Tensor weights;  // one raw scalar per input edge (weighted kinds)
  Tensor conv_w;   // C×C×3×3 post-fusion conv
  Tensor conv_b;
};

/// Executable neck: a topology plus per-layer, per-node parameters.
class Neck {
 public:
  Neck(FusionTopology topo, int channels, Rng& init_rng);

  /// Runs every layer; output pyramid keeps the input shapes and strides.
  FeaturePyramid run(const FeaturePyramid& in) const;

  const FusionTopology& topology() const { return topo_; }
  std::vector<std::vector<FusionNodeParams>>& layers() { return layers_; }
  const std::vector<std::vector<FusionNodeParams>>& layers() const { return layers_; }

  void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);

 private:
  FusionTopology topo_;
  int channels_;
  std::vector<std::vector<FusionNodeParams>> layers_;  // [layer][node]
};

/// Single fusion step: resampled inputs are combined (weighted form uses
/// the eps-normalized weights, the reference kinds average equally), then
/// the node conv runs. Exposed separately for the unrolled-formula tests.
Tensor fuse(const std::vector<Tensor>& inputs, const FusionNodeParams& params, bool weighted,
            const std::string& node_name);

}  // namespace dabf
