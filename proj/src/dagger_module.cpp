// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include "dagger/dagger_module.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dagger/error.hpp"
#include "dagger/rng.hpp"

namespace dagger {

std::vector<Parameter*> DaggerBank::parameters() {
  std::vector<Parameter*> out;
  for (DaggerParams& m : modules)
    for (Parameter* p : m.parameters()) out.push_back(p);
  return out;
}

std::uint64_t DaggerBank::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (const DaggerParams& m : modules) {
    for (const Parameter* p : {&m.fc1_weight, &m.fc1_bias, &m.fc2_weight, &m.fc2_bias})
      for (double v : p->value.data()) mix(v);
    mix(m.offset);
  }
  return h;
}

int default_hidden(int filters) { return std::max(8, filters / 4); }

std::vector<double> pool_and_normalize(const Tensor& kernel, const std::vector<bool>& active) {
  if (kernel.rank() != 2 && kernel.rank() != 4) {
    throw ShapeError("pool_and_normalize: expected a rank-2 or rank-4 kernel, got " + shape_str(kernel.shape()));
  }
  const auto n = static_cast<std::size_t>(kernel.dim(0));
  if (!active.empty() && active.size() != n) {
    throw ShapeError("pool_and_normalize: mask length " + std::to_string(active.size()) + " != filters " +
                     std::to_string(n));
  }
  const std::size_t row = kernel.numel() / n;
  std::vector<double> pooled(n, 0.0);
  for (std::size_t f = 0; f < n; ++f) {
    double s = 0.0;
    for (std::size_t j = 0; j < row; ++j) s += kernel[f * row + j];
    pooled[f] = s / static_cast<double>(row);
  }
  double mean = 0.0;
  std::size_t live = 0;
  for (std::size_t f = 0; f < n; ++f) {
    if (active.empty() || active[f]) {
      mean += pooled[f];
      ++live;
    }
  }
  if (live > 0) mean /= static_cast<double>(live);
  for (std::size_t f = 0; f < n; ++f) pooled[f] = (active.empty() || active[f]) ? pooled[f] - mean : 0.0;
  return pooled;
}

Var generate_gates(Tape& tape, DaggerParams& params, const Tensor& kernel, const std::vector<bool>& active, bool train) {
  const int n = params.filters();
  if (kernel.rank() < 1 || kernel.dim(0) != n) {
    throw ShapeError("generate_gates: layer '" + params.layer_id + "' expects " + std::to_string(n) +
                     " filters, kernel has shape " + shape_str(kernel.shape()));
  }
  auto param = [&](Parameter& p) { return train ? tape.leaf(p.value) : tape.view(p.value); };
  const Var pooled = tape.constant(Tensor({1, n}, pool_and_normalize(kernel, active)));
  Var h = relu(linear(pooled, param(params.fc1_weight), param(params.fc1_bias), params.layer_id + ".fc1"));
  Var g = sigmoid(linear(h, param(params.fc2_weight), param(params.fc2_bias), params.layer_id + ".fc2"));
  g = reshape(add_scalar(g, params.offset), {n});
  if (active.empty()) return g;
  Tensor mask({n});
  for (int f = 0; f < n; ++f) mask[static_cast<std::size_t>(f)] = active[static_cast<std::size_t>(f)] ? 1.0 : 0.0;
  return mul(g, tape.constant(std::move(mask)));
}

std::vector<double> gate_values(DaggerParams& params, const Tensor& kernel, const std::vector<bool>& active) {
  Tape tape;
  return generate_gates(tape, params, kernel, active, false).value().vec();
}

void align_gates(DaggerParams& params) {
  params.fc2_weight.value.fill(0.0);
  params.fc2_bias.value.fill(0.0);
  std::fill(params.fc2_weight.momentum.begin(), params.fc2_weight.momentum.end(), 0.0);
  std::fill(params.fc2_bias.momentum.begin(), params.fc2_bias.momentum.end(), 0.0);
  params.offset = 0.5;
}

void align_gates(DaggerBank& bank) {
  for (DaggerParams& m : bank.modules) align_gates(m);
}

DaggerBank dagger_init(const NetworkGraph& graph, std::uint64_t seed, const HiddenRule& hidden) {
  DaggerBank bank;
  Rng rng(seed);
  for (int li : graph.gated_layers()) {
    const LayerInfo& info = graph.layer(li);
    const int n = info.out_channels();
    const int h = hidden(n);
    if (h < 1) throw ConfigError("dagger hidden width must be >= 1 for layer '" + info.spec.id + "'");
    Rng layer_rng = rng.split();
    DaggerParams p;
    p.layer_id = info.spec.id;
    p.fc1_weight = Parameter(Tensor::randn({h, n}, layer_rng, std::sqrt(2.0 / n)));
    p.fc1_bias = Parameter(Tensor::zeros({h}));
    p.fc2_weight = Parameter(Tensor::zeros({n, h}));
    p.fc2_bias = Parameter(Tensor::zeros({n}));
    p.offset = 0.5;
    bank.modules.push_back(std::move(p));
  }
  return bank;
}

std::vector<bool> active_mask(const NetworkGraph& graph, int gate_index) {
  const GateVector& gv = graph.gates().at(static_cast<std::size_t>(gate_index));
  std::vector<bool> m(gv.size());
  for (std::size_t f = 0; f < m.size(); ++f) m[f] = gv.status[f] != GateStatus::Pruned;
  return m;
}

namespace {

void check_bank(const DaggerBank& bank, const NetworkGraph& graph) {
  if (bank.size() != graph.gates().size()) {
    throw ShapeError("dagger bank has " + std::to_string(bank.size()) + " modules for " +
                     std::to_string(graph.gates().size()) + " gated layers");
  }
}

}  // namespace

std::vector<Var> generate_all(Tape& tape, DaggerBank& bank, const NetworkGraph& graph, bool train) {
  check_bank(bank, graph);
  std::vector<Var> gates;
  for (std::size_t gi = 0; gi < bank.size(); ++gi) {
    const int li = graph.gated_layers()[gi];
    gates.push_back(generate_gates(tape, bank.modules[gi], graph.weights(li).weight.value,
                                   active_mask(graph, static_cast<int>(gi)), train));
  }
  return gates;
}

GateValues generate_all_values(DaggerBank& bank, const NetworkGraph& graph) {
  Tape tape;
  GateValues out;
  for (const Var& v : generate_all(tape, bank, graph, false)) out.push_back(v.value().vec());
  return out;
}

}  // namespace dagger
