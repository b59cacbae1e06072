// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include "dagger/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dagger/error.hpp"

namespace dagger {

void PruneConfig::validate() const {
  if (!(lambda > 0.0)) throw ConfigError("lambda must be > 0");
  if (!(prune_ratio > 0.0 && prune_ratio < 1.0)) throw ConfigError("prune_ratio must lie in (0, 1)");
  if (gate_iters < 0 || finetune_iters < 0 || final_finetune_epochs < 0) {
    throw ConfigError("iteration and epoch counts must be >= 0");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(gate_lr >= 0.0) || !(weight_lr >= 0.0) || !(final_lr >= 0.0)) {
    throw ConfigError("learning rates must be >= 0");
  }
}

PruneState initial_state(const NetworkGraph& graph) {
  PruneState s;
  for (std::size_t gi = 0; gi < graph.gates().size(); ++gi) {
    const int li = graph.gated_layers()[gi];
    for (int f = 0; f < static_cast<int>(graph.gates()[gi].size()); ++f) s.one_gates.insert(GateId{li, f});
  }
  s.current_flops = architecture_flops(graph);
  return s;
}

void apply_state(NetworkGraph& graph, const PruneState& state) {
  for (GateVector& gv : graph.gates()) {
    std::fill(gv.values.begin(), gv.values.end(), 1.0);
    std::fill(gv.status.begin(), gv.status.end(), GateStatus::Active);
  }
  for (const GateId& id : state.zero_gates) {
    graph.gates()[static_cast<std::size_t>(graph.layer(id.layer).gate_index)].prune(id.filter);
  }
}

namespace {

GateValues state_gates(const NetworkGraph& graph, const PruneState& state) {
  GateValues g;
  for (const GateVector& gv : graph.gates()) g.emplace_back(gv.size(), 1.0);
  for (const GateId& id : state.zero_gates) {
    g[static_cast<std::size_t>(graph.layer(id.layer).gate_index)][static_cast<std::size_t>(id.filter)] = 0.0;
  }
  return g;
}

SgdOptions sgd_options(const PruneConfig& c, double lr) { return SgdOptions{lr, c.momentum, c.nesterov, c.weight_decay}; }

Macs reference_flops(const NetworkGraph& graph, const PruneConfig& config) {
  return config.budget.pretrained > 0 ? config.budget.pretrained : architecture_flops(graph);
}

}  // namespace

GatePhaseResult gate_learning_phase(NetworkGraph& graph, DaggerBank& bank, BatchStream& stream,
                                    const PruneConfig& config) {
  const double c0 = static_cast<double>(reference_flops(graph, config));
  auto params = bank.parameters();
  GatePhaseResult r;
  Tensor images;
  std::vector<int> labels;
  for (int it = 0; it < config.gate_iters; ++it) {
    for (Parameter* p : params) p->zero_grad();
    Tape tape;
    const std::vector<Var> live = generate_all(tape, bank, graph, true);
    stream.next(images, labels);
    ForwardOptions fo;
    fo.mode = NormMode::Eval;
    fo.live_gates = live;
    const Var ce = softmax_cross_entropy(forward(tape, graph, tape.view(images), fo), labels);
    const Var reg = scale(total_flops_surrogate(tape, graph, live), config.lambda / c0);
    const Var loss = add(ce, reg);
    const double value = loss.value()[0];
    if (!std::isfinite(value)) {
      throw NumericError("gate phase: loss is not finite at iteration " + std::to_string(it) +
                         " (task loss " + std::to_string(ce.value()[0]) + ", gate loss " +
                         std::to_string(reg.value()[0]) + ")");
    }
    r.task_loss += ce.value()[0];
    r.gate_loss += reg.value()[0];
    double gsum = 0.0;
    std::size_t gcount = 0;
    for (std::size_t gi = 0; gi < live.size(); ++gi) {
      const GateVector& gv = graph.gates()[gi];
      for (std::size_t f = 0; f < gv.size(); ++f) {
        if (gv.status[f] != GateStatus::Active) continue;
        gsum += live[gi].value()[f];
        ++gcount;
      }
    }
    r.mean_gate.push_back(gcount ? gsum / static_cast<double>(gcount) : 0.0);
    tape.backward(loss);
    sgd_momentum_step(params, sgd_options(config, cosine_lr(it, config.gate_iters, config.gate_lr)));
  }
  if (config.gate_iters > 0) {
    r.task_loss /= config.gate_iters;
    r.gate_loss /= config.gate_iters;
  }
  r.gates = generate_all_values(bank, graph);
  return r;
}

std::vector<GateId> select_prune_candidates(const GateValues& snapshot, const NetworkGraph& graph,
                                            const PruneState& state, int k) {
  if (k < 1) throw Error("select_prune_candidates: k must be >= 1");
  if (static_cast<std::size_t>(k) >= state.one_gates.size()) {
    throw Error("select_prune_candidates: k = " + std::to_string(k) + " but only " +
                std::to_string(state.one_gates.size()) + " active gates remain");
  }
  if (snapshot.size() != graph.gates().size()) throw ShapeError("select_prune_candidates: snapshot size mismatch");
  std::vector<std::pair<double, GateId>> order;
  std::vector<int> active(graph.gates().size(), 0);
  for (const GateId& id : state.one_gates) {
    const auto gi = static_cast<std::size_t>(graph.layer(id.layer).gate_index);
    order.emplace_back(snapshot[gi].at(static_cast<std::size_t>(id.filter)), id);
    ++active[gi];
  }
  std::sort(order.begin(), order.end());
  std::vector<GateId> z;
  for (const auto& [value, id] : order) {
    if (static_cast<int>(z.size()) == k) break;
    int& left = active[static_cast<std::size_t>(graph.layer(id.layer).gate_index)];
    if (left <= 1) continue;
    --left;
    z.push_back(id);
  }
  return z;
}

FlopsVerdict flops_examination(const PruneState& state, const NetworkGraph& graph, double budget) {
  FlopsVerdict v;
  v.flops = total_flops_exact(graph, state_gates(graph, state));
  v.within_budget = static_cast<double>(v.flops) <= budget;
  return v;
}

double weight_finetune_phase(NetworkGraph& graph, BatchStream& stream, const PruneConfig& config) {
  Tensor images;
  std::vector<int> labels;
  double sum = 0.0;
  for (int it = 0; it < config.finetune_iters; ++it) {
    stream.next(images, labels);
    sum += train_step(graph, images, labels,
                      sgd_options(config, cosine_lr(it, config.finetune_iters, config.weight_lr)));
  }
  return config.finetune_iters > 0 ? sum / config.finetune_iters : 0.0;
}

Macs minimum_flops(const NetworkGraph& graph) {
  GateValues g;
  for (const GateVector& gv : graph.gates()) {
    std::vector<double> v(gv.size(), 0.0);
    v.at(0) = 1.0;
    g.push_back(std::move(v));
  }
  return total_flops_exact(graph, g);
}

PruneResult prune_loop(NetworkGraph& graph, DaggerBank& bank, const Dataset& data, const PruneConfig& config,
                       const RoundCallback& on_round) {
  config.validate();
  if (data.size() == 0) throw DataError("prune_loop: empty dataset");
  const double budget = config.budget.target;
  const Macs floor = minimum_flops(graph);
  if (budget < static_cast<double>(floor)) {
    throw BudgetError("budget " + std::to_string(budget) + " MACs is below the one-filter-per-layer minimum of " +
                      std::to_string(floor) + " MACs");
  }
  PruneState state = initial_state(graph);
  apply_state(graph, state);
  state.current_flops = flops_examination(state, graph, budget).flops;
  const std::size_t total_gates = state.one_gates.size();
  const int k = std::max(1, static_cast<int>(std::ceil(config.prune_ratio * static_cast<double>(total_gates) - 1e-9)));
  BatchStream stream(data, config.batch_size, config.seed);

  while (static_cast<double>(state.current_flops) > budget) {
    PruneEvent ev;
    ev.round = ++state.round;
    ev.flops_before = state.current_flops;

    // Alignment and its precondition.
    align_gates(bank);
    const GateValues aligned = generate_all_values(bank, graph);
    for (std::size_t gi = 0; gi < aligned.size(); ++gi)
      for (std::size_t f = 0; f < aligned[gi].size(); ++f)
        if (graph.gates()[gi].status[f] == GateStatus::Active) {
          ev.alignment_gate_error = std::max(ev.alignment_gate_error, std::abs(aligned[gi][f] - 1.0));
        }
    ev.alignment_flops_gap =
        total_flops_surrogate(graph, aligned) - static_cast<double>(total_flops_exact(graph, aligned));
    if (ev.alignment_gate_error > 1e-12 || ev.alignment_flops_gap != 0.0) {
      throw Error("alignment precondition violated in round " + std::to_string(ev.round));
    }

    ev.omega_before_gates = graph.weights_checksum();
    const GatePhaseResult gp = gate_learning_phase(graph, bank, stream, config);
    ev.omega_after_gates = graph.weights_checksum();
    ev.task_loss = gp.task_loss;
    ev.gate_loss = gp.gate_loss;

    // Greedy selection; widen Z while skip-group partners keep FLOPs flat.
    std::size_t eligible = 0;
    for (const GateVector& gv : graph.gates()) eligible += static_cast<std::size_t>(gv.count(GateStatus::Active) - 1);
    if (eligible == 0) {
      throw BudgetError("no prunable gates remain at " + std::to_string(state.current_flops) + " MACs, budget " +
                        std::to_string(budget));
    }
    PruneState next;
    for (int want = std::min<int>(k, static_cast<int>(eligible));; ++want) {
      next = state;
      for (const GateId& id : select_prune_candidates(gp.gates, graph, state, want)) {
        next.one_gates.erase(id);
        next.zero_gates.insert(id);
      }
      next.current_flops = flops_examination(next, graph, budget).flops;
      if (next.current_flops < state.current_flops) break;
      if (static_cast<std::size_t>(want) >= eligible) {
        throw BudgetError("pruning every remaining candidate leaves FLOPs at " + std::to_string(state.current_flops) +
                          " MACs, above the budget " + std::to_string(budget));
      }
    }
    for (const GateId& id : next.zero_gates)
      if (!state.zero_gates.contains(id)) ev.pruned.push_back(id);
    next.events = std::move(state.events);
    state = std::move(next);
    ev.flops_after = state.current_flops;
    apply_state(graph, state);

    ev.theta_before_finetune = bank.checksum();
    weight_finetune_phase(graph, stream, config);
    ev.theta_after_finetune = bank.checksum();

    state.events.push_back(ev);
    if (on_round) on_round(ev);
  }

  for (const GateId& id : state.one_gates) graph.gates()[static_cast<std::size_t>(graph.layer(id.layer).gate_index)].retain(id.filter);
  PruneResult result{materialize_pruned(graph), std::move(state)};
  return result;
}

std::vector<EvalResult> final_finetune(NetworkGraph& graph, const Dataset& data, const PruneConfig& config,
                                       const Dataset* eval) {
  TrainOptions t;
  t.epochs = config.final_finetune_epochs;
  t.batch_size = config.batch_size;
  t.sgd = sgd_options(config, config.final_lr);
  t.cosine = true;
  t.seed = config.seed ^ 0x5851f42d4c957f2dULL;
  std::vector<EvalResult> acc;
  train(graph, data, t, [&](const EpochStats&) { acc.push_back(evaluate(graph, eval ? *eval : data)); });
  return acc;
}

// ---------------------------------------------------------------------------
// Baselines

namespace {

BaselineResult finish_baseline(const NetworkGraph& graph, GateValues keep) {
  NetworkGraph g = graph;
  BaselineResult r;
  for (std::size_t gi = 0; gi < keep.size(); ++gi) {
    GateVector& gv = g.gates()[gi];
    int kept = 0;
    for (std::size_t f = 0; f < gv.size(); ++f) {
      if (keep[gi][f] != 0.0) {
        gv.retain(static_cast<int>(f));
        ++kept;
      } else {
        gv.prune(static_cast<int>(f));
      }
    }
    r.counts.push_back(kept);
  }
  r.flops = total_flops_exact(graph, keep);
  r.keep = std::move(keep);
  r.pruned = materialize_pruned(g);
  return r;
}

int max_width(const NetworkGraph& graph) {
  int m = 1;
  for (const GateVector& gv : graph.gates()) m = std::max(m, static_cast<int>(gv.size()));
  return m;
}

GateValues lowest_index_keep(const NetworkGraph& graph, double s) {
  GateValues keep;
  for (const GateVector& gv : graph.gates()) {
    const int n = static_cast<int>(gv.size());
    const int c = std::clamp(static_cast<int>(std::lround(s * n)), 1, n);
    std::vector<double> v(gv.size(), 0.0);
    std::fill_n(v.begin(), c, 1.0);
    keep.push_back(std::move(v));
  }
  return keep;
}

}  // namespace

BaselineResult uniform_baseline(const NetworkGraph& graph, double budget) {
  auto fits = [&](double s) { return static_cast<double>(total_flops_exact(graph, lowest_index_keep(graph, s))) <= budget; };
  if (!fits(0.0)) {
    throw BudgetError("uniform baseline: budget " + std::to_string(budget) + " below the one-filter-per-layer minimum");
  }
  double lo = 0.0, hi = 1.0;
  if (fits(1.0)) {
    lo = 1.0;
  } else {
    const double tol = 1.0 / (2.0 * max_width(graph));
    while (hi - lo >= tol) {
      const double mid = 0.5 * (lo + hi);
      (fits(mid) ? lo : hi) = mid;
    }
  }
  BaselineResult r = finish_baseline(graph, lowest_index_keep(graph, lo));
  r.scale = lo;
  return r;
}

std::vector<BaselineResult> random_baseline(const NetworkGraph& graph, double budget, int trials,
                                            std::uint64_t seed) {
  if (trials < 1) throw ConfigError("random baseline needs at least one trial");
  const BaselineResult uniform = uniform_baseline(graph, budget);
  const auto& groups = graph.groups();
  Rng master(seed);
  std::vector<BaselineResult> out;
  for (int t = 0; t < trials; ++t) {
    Rng rng = master.split();
    // Perturbed count per prunable group.
    std::vector<double> perturbed(groups.size(), 0.0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].fixed || groups[g].members.empty()) continue;
      const int gi = graph.layer(groups[g].members.front()).gate_index;
      perturbed[g] = rng.uniform(0.75, 1.25) * uniform.counts[static_cast<std::size_t>(gi)];
    }
    auto counts_at = [&](double scale) {
      std::vector<int> c(groups.size(), 0);
      for (std::size_t g = 0; g < groups.size(); ++g)
        if (perturbed[g] > 0.0) c[g] = std::clamp(static_cast<int>(std::lround(scale * perturbed[g])), 1, groups[g].channels);
      return c;
    };
    // Subsets drawn once per trial; a count c keeps the first c of them.
    std::vector<std::vector<int>> order(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g)
      if (perturbed[g] > 0.0) order[g] = rng.permutation(groups[g].channels);
    auto keep_for = [&](const std::vector<int>& counts) {
      GateValues keep;
      for (std::size_t gi = 0; gi < graph.gates().size(); ++gi) {
        const auto g = static_cast<std::size_t>(graph.layer(graph.gated_layers()[gi]).group);
        std::vector<double> v(graph.gates()[gi].size(), 0.0);
        for (int j = 0; j < counts[g]; ++j) v[static_cast<std::size_t>(order[g][static_cast<std::size_t>(j)])] = 1.0;
        keep.push_back(std::move(v));
      }
      return keep;
    };
    auto fits = [&](double scale) {
      return static_cast<double>(total_flops_exact(graph, keep_for(counts_at(scale)))) <= budget;
    };
    double hi = 1.0;
    for (std::size_t g = 0; g < groups.size(); ++g)
      if (perturbed[g] > 0.0) hi = std::max(hi, (groups[g].channels + 0.5) / perturbed[g]);
    double lo = 0.0;
    if (!fits(lo)) throw BudgetError("random baseline: budget unreachable with one filter per layer");
    if (fits(hi)) {
      lo = hi;
    } else {
      const double tol = 1.0 / (2.0 * max_width(graph));
      while (hi - lo >= tol) {
        const double mid = 0.5 * (lo + hi);
        (fits(mid) ? lo : hi) = mid;
      }
    }
    BaselineResult r = finish_baseline(graph, keep_for(counts_at(lo)));
    r.scale = lo;
    for (std::size_t gi = 0; gi < graph.gates().size(); ++gi) {
      r.perturbed.push_back(perturbed[static_cast<std::size_t>(graph.layer(graph.gated_layers()[gi]).group)]);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dagger
