#include "dabf/bwfpn.hpp"

#include <algorithm>
#include <stdexcept>

#include "dabf/ops.hpp"

namespace dabf {

void FeaturePyramid::validate() const {
  if (levels.size() != strides.size()) {
    throw std::invalid_argument("pyramid: " + std::to_string(levels.size()) + " levels but " +
                                std::to_string(strides.size()) + " strides");
  }
  for (size_t i = 0; i < levels.size(); ++i) {
    if (levels[i].rank() != 3) {
      throw std::invalid_argument("pyramid: level " + std::to_string(i) + " must be C×H×W, got " +
                                  shape_str(levels[i].shape()));
    }
    if (levels[i].dim(0) != levels[0].dim(0)) {
      throw std::invalid_argument("pyramid: level " + std::to_string(i) + " has " +
                                  std::to_string(levels[i].dim(0)) + " channels, level 0 has " +
                                  std::to_string(levels[0].dim(0)));
    }
    if (i > 0 && strides[i] <= strides[i - 1]) {
      throw std::invalid_argument("pyramid: strides must be strictly increasing");
    }
  }
}

NeckKind parse_neck(const std::string& name) {
  if (name == "fpn") return NeckKind::kFpn;
  if (name == "panet") return NeckKind::kPanet;
  if (name == "bwfpn") return NeckKind::kBwfpn;
  throw std::invalid_argument("unknown neck '" + name + "' (expected fpn|panet|bwfpn)");
}

std::string neck_name(NeckKind k) {
  switch (k) {
    case NeckKind::kFpn: return "fpn";
    case NeckKind::kPanet: return "panet";
    case NeckKind::kBwfpn: return "bwfpn";
  }
  throw std::invalid_argument("unknown neck kind");
}

std::vector<double> normalized_fusion_weights(const std::vector<double>& raw, double eps) {
  double total = 0.0;
  std::vector<double> r(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    r[i] = raw[i] > 0.0 ? raw[i] : 0.0;
    total += r[i];
  }
  for (double& v : r) v /= (eps + total);
  return r;
}

std::vector<std::pair<std::string, std::string>> FusionTopology::flow_edges() const {
  std::vector<std::pair<std::string, std::string>> edges;
  for (const FusionNodeSpec& n : nodes) {
    for (const FusionEdge& e : n.inputs) {
      std::string src = e.src == FusionEdge::Src::kInput
                            ? "in" + std::to_string(e.index)
                            : nodes[static_cast<size_t>(e.index)].name;
      edges.emplace_back(src, n.name);
    }
  }
  return edges;
}

FusionTopology build_topology(NeckKind kind, int num_levels, int num_layers) {
  if (num_levels < 2) {
    throw std::invalid_argument("build_topology: need at least 2 levels, got " +
                                std::to_string(num_levels));
  }
  if (num_layers < 1) throw std::invalid_argument("build_topology: num_layers must be >= 1");
  FusionTopology t;
  t.kind = kind;
  t.num_levels = num_levels;
  t.num_layers = num_layers;
  t.weighted = kind == NeckKind::kBwfpn;
  t.output_node.assign(static_cast<size_t>(num_levels), -1);
  const int L = num_levels;

  auto in_edge = [](int level, FusionEdge::Resample r = FusionEdge::Resample::kNone) {
    return FusionEdge{FusionEdge::Src::kInput, level, r};
  };
  auto node_edge = [](int node, FusionEdge::Resample r) {
    return FusionEdge{FusionEdge::Src::kNode, node, r};
  };
  constexpr auto kUp = FusionEdge::Resample::kUp;      // coarse -> fine
  constexpr auto kDown = FusionEdge::Resample::kDown;  // fine -> coarse

  if (kind == NeckKind::kFpn || kind == NeckKind::kPanet) {
    // Top-down chain; the coarsest level passes through unchanged.
    std::vector<int> td(static_cast<size_t>(L), -1);  // node index per level, -1 = raw input
    for (int i = L - 2; i >= 0; --i) {
      FusionNodeSpec n;
      n.name = "td" + std::to_string(i);
      n.inputs.push_back(in_edge(i));
      if (td[static_cast<size_t>(i + 1)] < 0) {
        n.inputs.push_back(in_edge(i + 1, kUp));
      } else {
        n.inputs.push_back(node_edge(td[static_cast<size_t>(i + 1)], kUp));
      }
      td[static_cast<size_t>(i)] = static_cast<int>(t.nodes.size());
      t.nodes.push_back(std::move(n));
    }
    if (kind == NeckKind::kFpn) {
      for (int i = 0; i < L - 1; ++i) t.output_node[static_cast<size_t>(i)] = td[static_cast<size_t>(i)];
      t.output_node[static_cast<size_t>(L - 1)] = -1;  // passthrough
    } else {
      // Bottom-up pass on top of the chain; td0 is already the level-0 output.
      t.output_node[0] = td[0];
      int prev_out = td[0];
      for (int i = 1; i < L; ++i) {
        FusionNodeSpec n;
        n.name = "out" + std::to_string(i);
        if (i == L - 1) {
          n.inputs.push_back(in_edge(i));
        } else {
          n.inputs.push_back(node_edge(td[static_cast<size_t>(i)], FusionEdge::Resample::kNone));
        }
        n.inputs.push_back(node_edge(prev_out, kDown));
        prev_out = static_cast<int>(t.nodes.size());
        t.output_node[static_cast<size_t>(i)] = prev_out;
        t.nodes.push_back(std::move(n));
      }
    }
  } else {
    // Bidirectional weighted: top-down intermediates for interior levels,
    // then outputs with the extra skip edge from the original input.
    std::vector<int> td(static_cast<size_t>(L), -1);
    for (int i = L - 2; i >= 1; --i) {
      FusionNodeSpec n;
      n.name = "td" + std::to_string(i);
      n.inputs.push_back(in_edge(i));
      if (td[static_cast<size_t>(i + 1)] < 0) {
        n.inputs.push_back(in_edge(i + 1, kUp));
      } else {
        n.inputs.push_back(node_edge(td[static_cast<size_t>(i + 1)], kUp));
      }
      td[static_cast<size_t>(i)] = static_cast<int>(t.nodes.size());
      t.nodes.push_back(std::move(n));
    }
    // Bottom output: its top-down node would duplicate the output node, so
    // the single-input-node rule folds them together.
    {
      FusionNodeSpec n;
      n.name = "out0";
      n.inputs.push_back(in_edge(0));
      if (L == 2) {
        n.inputs.push_back(in_edge(1, kUp));
      } else {
        n.inputs.push_back(node_edge(td[1], kUp));
      }
      n.out_level = 0;
      t.output_node[0] = static_cast<int>(t.nodes.size());
      t.nodes.push_back(std::move(n));
    }
    for (int i = 1; i < L; ++i) {
      FusionNodeSpec n;
      n.name = "out" + std::to_string(i);
      n.inputs.push_back(in_edge(i));  // extra path from the original input
      if (i < L - 1) n.inputs.push_back(node_edge(td[static_cast<size_t>(i)], FusionEdge::Resample::kNone));
      n.inputs.push_back(node_edge(t.output_node[static_cast<size_t>(i - 1)], kDown));
      t.output_node[static_cast<size_t>(i)] = static_cast<int>(t.nodes.size());
      t.nodes.push_back(std::move(n));
    }
  }

  for (int lvl = 0; lvl < L; ++lvl) {
    int n = t.output_node[static_cast<size_t>(lvl)];
    if (n >= 0) t.nodes[static_cast<size_t>(n)].out_level = lvl;
  }
  for (const FusionNodeSpec& n : t.nodes) {
    if (n.inputs.size() < 2) {
      throw std::logic_error("build_topology: node '" + n.name + "' has a single input edge");
    }
  }
  return t;
}

Tensor fuse(const std::vector<Tensor>& inputs, const FusionNodeParams& params, bool weighted,
            const std::string& node_name) {
  if (inputs.size() < 2) {
    throw std::invalid_argument("fuse: node '" + node_name + "' needs at least 2 inputs, got " +
                                std::to_string(inputs.size()));
  }
  const Shape& s = inputs[0].shape();
  for (size_t i = 1; i < inputs.size(); ++i) {
    if (inputs[i].shape() != s) {
      throw std::invalid_argument("fuse: node '" + node_name + "' input " + std::to_string(i) +
                                  " has shape " + shape_str(inputs[i].shape()) + ", expected " +
                                  shape_str(s));
    }
  }
  Tensor mixed;
  if (weighted) {
    mixed = fused_weighted_sum(inputs, params.weights, kFusionEps);
  } else {
    Tensor acc = inputs[0];
    for (size_t i = 1; i < inputs.size(); ++i) acc = add(acc, inputs[i]);
    mixed = mul_scalar(acc, 1.0 / static_cast<double>(inputs.size()));
  }
  // post conv, 3x3, linear
  int c = mixed.dim(0);
  Tensor as_nchw = reshape(mixed, Shape{1, c, mixed.dim(1), mixed.dim(2)});
  Tensor conv = conv2d(as_nchw, params.conv_w, params.conv_b, 1, 1);
  return reshape(conv, mixed.shape());
}

namespace {

Tensor identity_conv_weight(int channels) {
  std::vector<double> w(static_cast<size_t>(channels) * channels * 9, 0.0);
  for (int o = 0; o < channels; ++o) {
    w[((static_cast<size_t>(o) * channels + o) * 3 + 1) * 3 + 1] = 1.0;
  }
  return Tensor::from(Shape{channels, channels, 3, 3}, std::move(w), true);
}

}  // namespace

Neck::Neck(FusionTopology topo, int channels, Rng& init_rng)
    : topo_(std::move(topo)), channels_(channels) {
  (void)init_rng;
  layers_.resize(static_cast<size_t>(topo_.num_layers));
  for (auto& layer : layers_) {
    layer.reserve(topo_.nodes.size());
    for (const FusionNodeSpec& n : topo_.nodes) {
      FusionNodeParams p;
      // Every edge starts at weight 1: the network begins as an
      // eps-discounted average, which the tests anchor on.
      p.weights = Tensor::full(Shape{static_cast<int>(n.inputs.size())}, 1.0, true);
      p.conv_w = identity_conv_weight(channels_);
      p.conv_b = Tensor::zeros(Shape{channels_}, true);
      layer.push_back(std::move(p));
    }
  }
}

FeaturePyramid Neck::run(const FeaturePyramid& in) const {
  in.validate();
  if (in.num_levels() != topo_.num_levels) {
    throw std::invalid_argument("neck: pyramid has " + std::to_string(in.num_levels()) +
                                " levels, topology expects " + std::to_string(topo_.num_levels));
  }
  std::vector<Tensor> current = in.levels;
  for (int layer = 0; layer < topo_.num_layers; ++layer) {
    std::vector<Tensor> node_out(topo_.nodes.size());
    for (size_t ni = 0; ni < topo_.nodes.size(); ++ni) {
      const FusionNodeSpec& spec = topo_.nodes[ni];
      std::vector<Tensor> ins;
      ins.reserve(spec.inputs.size());
      for (const FusionEdge& e : spec.inputs) {
        Tensor src = e.src == FusionEdge::Src::kInput ? current[static_cast<size_t>(e.index)]
                                                      : node_out[static_cast<size_t>(e.index)];
        if (e.resample == FusionEdge::Resample::kUp) src = resize_up2(src);
        if (e.resample == FusionEdge::Resample::kDown) src = resize_down2(src);
        ins.push_back(src);
      }
      node_out[ni] = fuse(ins, layers_[static_cast<size_t>(layer)][ni], topo_.weighted, spec.name);
    }
    std::vector<Tensor> next(current.size());
    for (int lvl = 0; lvl < topo_.num_levels; ++lvl) {
      int node = topo_.output_node[static_cast<size_t>(lvl)];
      next[static_cast<size_t>(lvl)] = node < 0 ? current[static_cast<size_t>(lvl)]
                                                : node_out[static_cast<size_t>(node)];
    }
    current = std::move(next);
  }
  FeaturePyramid out;
  out.levels = std::move(current);
  out.strides = in.strides;
  return out;
}

void Neck::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
  for (size_t layer = 0; layer < layers_.size(); ++layer) {
    for (size_t ni = 0; ni < layers_[layer].size(); ++ni) {
      std::string base = "neck.l" + std::to_string(layer) + "." + topo_.nodes[ni].name;
      if (topo_.weighted) fn(base + ".w", layers_[layer][ni].weights);
      fn(base + ".conv_w", layers_[layer][ni].conv_w);
      fn(base + ".conv_b", layers_[layer][ni].conv_b);
    }
  }
}

}  // namespace dabf
