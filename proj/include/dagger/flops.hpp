// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_FLOPS_HPP
#define DAGGER_FLOPS_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dagger/autodiff.hpp"
#include "dagger/graph.hpp"

namespace dagger {

/// FLOPs are multiply-accumulate counts (MACs) of conv, depthwise-conv and
/// linear layers. Batchnorm, activations, pooling and bias adds are free.
using Macs = std::uint64_t;

struct FlopsBudget {
  double target = 0.0;       // C
  Macs pretrained = 0;       // C0
  std::optional<double> r_accel;
};

/// C = C0 / r. Throws ConfigError unless r >= 1.
FlopsBudget budget_from_acceleration(Macs c0, double r_accel);
/// Throws ConfigError unless 0 < target <= C0.
FlopsBudget budget_from_target(Macs c0, double target);

/// Soft union 1 - prod(1 - g_k), elementwise over the members. On binary
/// inputs this is logical OR. A single member is returned unchanged.
std::vector<double> effective_skip_gates(std::span<const std::vector<double>> members);

/// Cost rule for one MAC-bearing layer.
struct LayerFlopsRule {
  int layer = -1;
  std::string layer_id;
  LayerKind kind = LayerKind::Conv;
  int kernel_h = 1;
  int kernel_w = 1;
  /// Output spatial extents for conv kinds; for linear the spatial size of
  /// each flattened input channel (1 after global pooling).
  int out_h = 1;
  int out_w = 1;
  int in_group = -1;
  int out_group = -1;

  /// MACs per (input channel, output channel) pair, or per channel for
  /// depthwise.
  Macs unit() const {
    return static_cast<Macs>(kernel_h) * static_cast<Macs>(kernel_w) * static_cast<Macs>(out_h) *
           static_cast<Macs>(out_w);
  }
};

std::vector<LayerFlopsRule> flops_rules(const NetworkGraph& graph);

/// ||g_in||_0 * kh * kw * h * w * ||g_out||_0; depthwise uses ||g_out||_0 only.
Macs layer_flops_exact(const LayerFlopsRule& rule, std::span<const double> gates_in, std::span<const double> gates_out);
/// Same with l1 norms.
double layer_flops_surrogate(const LayerFlopsRule& rule, std::span<const double> gates_in,
                             std::span<const double> gates_out);

/// Effective per-channel gate of every channel group: the soft union of its
/// members' gates, all ones for fixed groups.
GateValues group_gates(const NetworkGraph& graph, const GateValues& gates);

Macs total_flops_exact(const NetworkGraph& graph, const GateValues& gates);
/// Uses the graph's stored gate values.
Macs total_flops_exact(const NetworkGraph& graph);
/// FLOPs of the unpruned architecture.
Macs architecture_flops(const NetworkGraph& graph);

double total_flops_surrogate(const NetworkGraph& graph, const GateValues& gates);
/// Differentiable surrogate; `live_gates` is indexed like graph.gates().
Var total_flops_surrogate(Tape& tape, const NetworkGraph& graph, std::span<const Var> live_gates);

struct LayerFlopsRow {
  std::string layer_id;
  LayerKind kind = LayerKind::Conv;
  int active_in = 0;
  int active_out = 0;
  Macs exact = 0;
  double surrogate = 0.0;
};

std::vector<LayerFlopsRow> flops_table(const NetworkGraph& graph, const GateValues& gates);
/// CSV with columns layer_id,kind,active_in,active_out,exact_macs,surrogate
/// and a final "total" row.
std::string flops_table_csv(const std::vector<LayerFlopsRow>& rows);

}  // namespace dagger

#endif  // DAGGER_FLOPS_HPP
