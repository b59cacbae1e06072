// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_PRUNER_HPP
#define DAGGER_PRUNER_HPP

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "dagger/dagger_module.hpp"
#include "dagger/data.hpp"
#include "dagger/flops.hpp"
#include "dagger/graph.hpp"
#include "dagger/training.hpp"

namespace dagger {

struct PruneConfig {
  FlopsBudget budget;
  double lambda = 8.0;
  /// Fraction of the initial gate count pruned per round.
  double prune_ratio = 0.006;
  int gate_iters = 100;
  int finetune_iters = 100;
  int batch_size = 64;
  double gate_lr = 0.001;
  double weight_lr = 0.001;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  int final_finetune_epochs = 0;
  double final_lr = 0.01;
  std::uint64_t seed = 0;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
};

struct PruneEvent {
  int round = 0;
  std::vector<GateId> pruned;
  Macs flops_before = 0;
  Macs flops_after = 0;
  /// Mean cross entropy and mean lambda * R / C0 over the gate phase.
  double task_loss = 0.0;
  double gate_loss = 0.0;
  /// Largest |g - 1| over active gates, and surrogate minus exact FLOPs of
  /// the support, both measured right after alignment.
  double alignment_gate_error = 0.0;
  double alignment_flops_gap = 0.0;
  std::uint64_t omega_before_gates = 0;
  std::uint64_t omega_after_gates = 0;
  std::uint64_t theta_before_finetune = 0;
  std::uint64_t theta_after_finetune = 0;
};

struct PruneState {
  std::set<GateId> one_gates;   // A
  std::set<GateId> zero_gates;  // B
  int round = 0;
  Macs current_flops = 0;
  std::vector<PruneEvent> events;
};

/// A = every gate of the graph, B empty.
PruneState initial_state(const NetworkGraph& graph);
/// Writes statuses and values (A -> active 1, B -> pruned 0) into the graph.
void apply_state(NetworkGraph& graph, const PruneState& state);

struct GatePhaseResult {
  GateValues gates;
  double task_loss = 0.0;
  double gate_loss = 0.0;
  /// Mean active gate value seen by each iteration, before its update.
  std::vector<double> mean_gate;
};

/// Trains the Dagger bank for config.gate_iters steps on
/// CE + lambda * surrogate / C0 with the network weights frozen and
/// batchnorm in eval mode. Returns the resulting live gate values.
GatePhaseResult gate_learning_phase(NetworkGraph& graph, DaggerBank& bank, BatchStream& stream,
                                    const PruneConfig& config);

/// The k smallest active gates by value, ties by (layer, filter), skipping
/// any gate that would leave its layer without an active gate.
std::vector<GateId> select_prune_candidates(const GateValues& snapshot, const NetworkGraph& graph,
                                            const PruneState& state, int k);

struct FlopsVerdict {
  Macs flops = 0;
  bool within_budget = false;
};

/// Exact FLOPs with A at 1 and B at 0.
FlopsVerdict flops_examination(const PruneState& state, const NetworkGraph& graph, double budget);

/// SGD on the network weights for config.finetune_iters steps with cross
/// entropy only (batchnorm in train mode, gates A=1, B=0).
double weight_finetune_phase(NetworkGraph& graph, BatchStream& stream, const PruneConfig& config);

/// Smallest exact FLOPs reachable while every gated layer keeps one filter.
Macs minimum_flops(const NetworkGraph& graph);

struct PruneResult {
  NetworkGraph pruned;  // materialized
  PruneState state;
};

using RoundCallback = std::function<void(const PruneEvent&)>;

/// The greedy alternating loop. `graph` is left with final statuses (A
/// retained, B pruned); the returned graph is its materialization.
PruneResult prune_loop(NetworkGraph& graph, DaggerBank& bank, const Dataset& data, const PruneConfig& config,
                       const RoundCallback& on_round = {});

/// final_finetune_epochs of SGD from final_lr with a per-step cosine
/// schedule. Returns the eval accuracy after each epoch (on `eval` when
/// given, else on `data`).
std::vector<EvalResult> final_finetune(NetworkGraph& graph, const Dataset& data, const PruneConfig& config,
                                       const Dataset* eval = nullptr);

// ---------------------------------------------------------------------------
// Baselines

struct BaselineResult {
  NetworkGraph pruned;       // materialized
  GateValues keep;           // binary per gated layer, indexed like graph.gates()
  std::vector<int> counts;   // kept filters per gated layer
  /// Random baseline only: per gated layer, perturbed uniform count before
  /// renormalization.
  std::vector<double> perturbed;
  double scale = 1.0;
  Macs flops = 0;
};

/// Largest uniform width scale s whose lowest-index round(s * n) filters
/// (at least one) meet the budget.
BaselineResult uniform_baseline(const NetworkGraph& graph, double budget);

/// `trials` structures whose per-group counts perturb the uniform counts by
/// U[0.75, 1.25], renormalized by bisection on a global scale, with random
/// filter subsets shared within each channel group.
std::vector<BaselineResult> random_baseline(const NetworkGraph& graph, double budget, int trials, std::uint64_t seed);

}  // namespace dagger

#endif  // DAGGER_PRUNER_HPP
