// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_DAGGER_MODULE_HPP
#define DAGGER_DAGGER_MODULE_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dagger/autodiff.hpp"
#include "dagger/graph.hpp"
#include "dagger/optim.hpp"

namespace dagger {

/// Gate generator of one gated layer:
///   g = sigmoid(fc2(relu(fc1(center(pool(W)))))) + offset
/// then multiplied by the layer's active mask so pruned gates stay 0.
struct DaggerParams {
  std::string layer_id;
  Parameter fc1_weight;  // [hidden, n]
  Parameter fc1_bias;    // [hidden]
  Parameter fc2_weight;  // [n, hidden]
  Parameter fc2_bias;    // [n]
  double offset = 0.0;

  int filters() const { return fc2_bias.value.dim(0); }
  int hidden() const { return fc1_bias.value.dim(0); }
  std::vector<Parameter*> parameters() { return {&fc1_weight, &fc1_bias, &fc2_weight, &fc2_bias}; }
};

/// One DaggerParams per gated layer, in gate order.
struct DaggerBank {
  std::vector<DaggerParams> modules;

  std::size_t size() const { return modules.size(); }
  std::vector<Parameter*> parameters();
  /// FNV-1a over all parameters and offsets.
  std::uint64_t checksum() const;
};

using HiddenRule = std::function<int(int filters)>;

/// max(8, n / 4).
int default_hidden(int filters);

/// Per-filter mean of `kernel` over every non-filter axis (rank 2 or 4),
/// centered by the mean over active filters. Inactive entries are 0. An
/// empty `active` means all filters are active.
std::vector<double> pool_and_normalize(const Tensor& kernel, const std::vector<bool>& active = {});

/// Differentiable gates [n]. The kernel is a constant; gradients reach only
/// the fc parameters, and only when `train` is set.
Var generate_gates(Tape& tape, DaggerParams& params, const Tensor& kernel, const std::vector<bool>& active = {},
                   bool train = false);

/// Plain-value variant of generate_gates.
std::vector<double> gate_values(DaggerParams& params, const Tensor& kernel, const std::vector<bool>& active = {});

/// Zeros fc2 (and its momentum) and sets offset 0.5 so every gate is 1.
void align_gates(DaggerParams& params);
void align_gates(DaggerBank& bank);

/// fc1 ~ N(0, 2/n) with zero bias, fc2 zero, offset 0.5.
DaggerBank dagger_init(const NetworkGraph& graph, std::uint64_t seed = 0, const HiddenRule& hidden = default_hidden);

/// Active mask (status != pruned) of gate vector `gate_index`.
std::vector<bool> active_mask(const NetworkGraph& graph, int gate_index);

/// Live gates for every gated layer from the layers' current kernels.
std::vector<Var> generate_all(Tape& tape, DaggerBank& bank, const NetworkGraph& graph, bool train);
GateValues generate_all_values(DaggerBank& bank, const NetworkGraph& graph);

}  // namespace dagger

#endif  // DAGGER_DAGGER_MODULE_HPP
