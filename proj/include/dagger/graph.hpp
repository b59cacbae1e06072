// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_GRAPH_HPP
#define DAGGER_GRAPH_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dagger/autodiff.hpp"
#include "dagger/optim.hpp"
#include "dagger/tensor.hpp"

namespace dagger {

enum class LayerKind { Conv, DepthwiseConv, Linear, BatchNorm, Activation, AvgPool, Add };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view s);

/// Declarative description of one layer.
///
/// `filters` is the filter count n^l. It is required for conv and linear
/// layers; for every other kind it is derived from the input during
/// `build_graph` (a depthwise conv may state it, but it must match).
struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::Conv;
  int filters = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  /// Predecessor ids; "input" names the network input. Empty means the
  /// previous layer (or the input for the first layer).
  std::vector<std::string> inputs;
  /// Conv/linear only. Unset means gated, except for the output layer,
  /// which follows NetworkConfig::gate_classifier.
  std::optional<bool> gated;
  bool bias = false;
  ActivationKind activation = ActivationKind::Relu;
  /// AvgPool over the full spatial extent.
  bool global = false;
};

struct NetworkConfig {
  /// Per-sample input extent [C, H, W].
  Shape input_shape;
  std::vector<LayerSpec> layers;
  bool gate_classifier = false;
};

/// Reads the key-value network format (see configs/*.net):
///
///     input = 3x8x8
///     [conv1]
///     kind = conv
///     filters = 16
///     kernel = 3
///     padding = 1
NetworkConfig parse_network_config(std::string_view text);
NetworkConfig load_network_config(const std::string& path);
std::string format_network_config(const NetworkConfig& config);

enum class GateStatus : std::uint8_t { Active, Pruned, Retained };
std::string_view to_string(GateStatus s);

/// Gates of one gated layer. Pruned entries hold exactly 0 and retained
/// entries exactly 1; active entries may hold any non-negative value.
struct GateVector {
  std::string layer_id;
  std::vector<double> values;
  std::vector<GateStatus> status;

  std::size_t size() const { return values.size(); }
  int count(GateStatus s) const;
  void prune(int filter);
  void retain(int filter);
};

/// Gate identity used for ordering: (layer index in the graph, filter).
struct GateId {
  int layer = 0;
  int filter = 0;
  auto operator<=>(const GateId&) const = default;
};

struct LayerWeights {
  Parameter weight;
  Parameter bias;
  Parameter gamma;
  Parameter beta;
  RunningStats stats;
};

/// A layer with its resolved connectivity and shapes.
struct LayerInfo {
  LayerSpec spec;
  /// Predecessor layer indices; -1 is the network input.
  std::vector<int> inputs;
  /// Per-sample input/output shapes: [C,H,W] or [C].
  Shape in_shape;
  Shape out_shape;
  /// Channel group of the output channels (see ChannelGroup).
  int group = -1;
  /// Channel group of the input channels (-1 for add layers).
  int in_group = -1;
  /// Index into NetworkGraph::gates() or -1.
  int gate_index = -1;
  /// Layer after whose output the gate multiplies the channels. This is the
  /// layer itself, or the batchnorm directly consuming it.
  int gate_site = -1;

  int out_channels() const { return out_shape.front(); }
  int in_channels() const { return in_shape.front(); }
  bool is_gated() const { return gate_index >= 0; }
};

/// A set of feature-map channels that must be kept or removed together:
/// the outputs of all producers merged by add nodes, plus depthwise convs
/// operating on them. The effective gate of a group is the union of its
/// members' gates. `fixed` groups (network input, ungated producers) are
/// never pruned.
struct ChannelGroup {
  int channels = 0;
  std::vector<int> members;
  bool fixed = false;
};

/// Per-gated-layer gate values, indexed like NetworkGraph::gates().
using GateValues = std::vector<std::vector<double>>;

class NetworkGraph;

/// Resolves connectivity and shapes, groups channels and initializes
/// weights (Kaiming-normal fan-in scaling, zero biases, unit BN) from `seed`.
/// All gates start at 1 with status active.
NetworkGraph build_graph(const NetworkConfig& config, std::uint64_t seed = 0);

/// Physically removes pruned filters. Requires every gate to be pruned or
/// retained. Channel groups keep the union of their members' retained
/// filters; a pruned filter kept because of the union has its weights
/// zeroed and keeps a pruned gate, so outputs match the gated source. A
/// gated classifier is handled the same way and keeps every logit.
NetworkGraph materialize_pruned(const NetworkGraph& graph);

class NetworkGraph {
 public:
  NetworkGraph() = default;

  const NetworkConfig& config() const { return config_; }
  const Shape& input_shape() const { return config_.input_shape; }
  std::span<const LayerInfo> layers() const { return layers_; }
  const LayerInfo& layer(int index) const { return layers_.at(static_cast<std::size_t>(index)); }
  int index_of(std::string_view id) const;
  int output_index() const { return static_cast<int>(layers_.size()) - 1; }
  int num_classes() const { return layers_.back().out_channels(); }

  LayerWeights& weights(int index) { return weights_.at(static_cast<std::size_t>(index)); }
  const LayerWeights& weights(int index) const { return weights_.at(static_cast<std::size_t>(index)); }

  std::vector<GateVector>& gates() { return gates_; }
  const std::vector<GateVector>& gates() const { return gates_; }
  /// Layer indices of gated layers, in gate order.
  const std::vector<int>& gated_layers() const { return gated_layers_; }
  const std::vector<ChannelGroup>& groups() const { return groups_; }

  GateValues gate_values() const;
  /// Every weight-bearing Parameter (conv/linear weights and biases, BN affine).
  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const;

  /// FNV-1a over all weights and BN running statistics.
  std::uint64_t weights_checksum() const;

 private:
  friend NetworkGraph build_graph(const NetworkConfig& config, std::uint64_t seed);
  friend NetworkGraph materialize_pruned(const NetworkGraph& graph);

  NetworkConfig config_;
  std::vector<LayerInfo> layers_;
  std::vector<LayerWeights> weights_;
  std::vector<GateVector> gates_;
  std::vector<int> gated_layers_;
  std::vector<ChannelGroup> groups_;
};

struct ForwardOptions {
  NormMode mode = NormMode::Eval;
  /// Live gate values, indexed like NetworkGraph::gates(). When empty the
  /// stored gate values are used.
  std::span<const Var> live_gates;
  /// Record weights as leaves receiving gradients (otherwise frozen views).
  bool train_weights = false;
  /// Skip gate multiplication entirely.
  bool ungated = false;
  /// When set, receives every layer's output (after gating) in layer order.
  std::vector<Var>* trace = nullptr;
};

/// Gated forward pass: channel i of every gated layer's output (or of the
/// batchnorm right after it) is multiplied by its gate.
Var forward(Tape& tape, NetworkGraph& graph, const Var& batch, const ForwardOptions& opts);

/// Convenience forward in eval mode using stored gates; returns logits.
Tensor gated_forward(NetworkGraph& graph, const Tensor& batch);

/// Human-readable invariant violations; empty when the graph is consistent.
std::vector<std::string> validate_graph(const NetworkGraph& graph);

/// Per-group effective binary keep mask (union over members, all ones for
/// fixed groups) for the given gate values.
std::vector<std::vector<bool>> group_keep_masks(const NetworkGraph& graph, const GateValues& gates);

}  // namespace dagger

#endif  // DAGGER_GRAPH_HPP
