// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include "dagger/flops.hpp"

#include <cmath>
#include <sstream>

#include "dagger/error.hpp"

namespace dagger {

FlopsBudget budget_from_acceleration(Macs c0, double r_accel) {
  if (!(r_accel >= 1.0) || !std::isfinite(r_accel)) {
    throw ConfigError("acceleration rate must be >= 1, got " + std::to_string(r_accel));
  }
  FlopsBudget b;
  b.pretrained = c0;
  b.target = static_cast<double>(c0) / r_accel;
  b.r_accel = r_accel;
  return b;
}

FlopsBudget budget_from_target(Macs c0, double target) {
  if (!(target > 0.0) || target > static_cast<double>(c0)) {
    throw ConfigError("FLOPs budget must lie in (0, " + std::to_string(c0) + "], got " + std::to_string(target));
  }
  FlopsBudget b;
  b.pretrained = c0;
  b.target = target;
  return b;
}

std::vector<double> effective_skip_gates(std::span<const std::vector<double>> members) {
  if (members.empty()) throw ShapeError("effective_skip_gates: no members");
  const std::size_t n = members.front().size();
  for (const auto& m : members) {
    if (m.size() != n) {
      throw ShapeError("effective_skip_gates: length mismatch " + std::to_string(m.size()) + " vs " +
                       std::to_string(n));
    }
  }
  if (members.size() == 1) return members.front();
  std::vector<double> keep(n, 1.0);
  for (const auto& m : members)
    for (std::size_t c = 0; c < n; ++c) keep[c] *= 1.0 - m[c];
  for (double& v : keep) v = 1.0 - v;
  return keep;
}

std::vector<LayerFlopsRule> flops_rules(const NetworkGraph& graph) {
  std::vector<LayerFlopsRule> rules;
  const auto layers = graph.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerInfo& info = layers[i];
    const LayerKind kind = info.spec.kind;
    if (kind != LayerKind::Conv && kind != LayerKind::DepthwiseConv && kind != LayerKind::Linear) continue;
    LayerFlopsRule r;
    r.layer = static_cast<int>(i);
    r.layer_id = info.spec.id;
    r.kind = kind;
    r.in_group = info.in_group;
    r.out_group = info.group;
    if (kind == LayerKind::Linear) {
      r.out_h = static_cast<int>(shape_numel(info.in_shape) / static_cast<std::size_t>(info.in_channels()));
    } else {
      r.kernel_h = info.spec.kernel_h;
      r.kernel_w = info.spec.kernel_w;
      r.out_h = info.out_shape[1];
      r.out_w = info.out_shape[2];
    }
    rules.push_back(std::move(r));
  }
  return rules;
}

namespace {

Macs l0(std::span<const double> g) {
  Macs n = 0;
  for (double v : g) n += v != 0.0 ? 1 : 0;
  return n;
}

double l1(std::span<const double> g) {
  double s = 0.0;
  for (double v : g) s += v;
  return s;
}

}  // namespace

Macs layer_flops_exact(const LayerFlopsRule& rule, std::span<const double> gates_in,
                       std::span<const double> gates_out) {
  if (rule.kind == LayerKind::DepthwiseConv) return l0(gates_out) * rule.unit();
  return l0(gates_in) * rule.unit() * l0(gates_out);
}

double layer_flops_surrogate(const LayerFlopsRule& rule, std::span<const double> gates_in,
                             std::span<const double> gates_out) {
  const auto unit = static_cast<double>(rule.unit());
  if (rule.kind == LayerKind::DepthwiseConv) return l1(gates_out) * unit;
  return l1(gates_in) * unit * l1(gates_out);
}

GateValues group_gates(const NetworkGraph& graph, const GateValues& gates) {
  if (gates.size() != graph.gates().size()) {
    throw ShapeError("group_gates: " + std::to_string(gates.size()) + " gate vectors for " +
                     std::to_string(graph.gates().size()) + " gated layers");
  }
  GateValues out;
  for (const ChannelGroup& grp : graph.groups()) {
    if (grp.fixed || grp.members.empty()) {
      out.emplace_back(static_cast<std::size_t>(grp.channels), 1.0);
      continue;
    }
    std::vector<std::vector<double>> members;
    for (int m : grp.members) members.push_back(gates[static_cast<std::size_t>(graph.layer(m).gate_index)]);
    out.push_back(effective_skip_gates(members));
  }
  return out;
}

Macs total_flops_exact(const NetworkGraph& graph, const GateValues& gates) {
  const GateValues eff = group_gates(graph, gates);
  Macs total = 0;
  for (const LayerFlopsRule& r : flops_rules(graph)) {
    total += layer_flops_exact(r, eff[static_cast<std::size_t>(r.in_group)], eff[static_cast<std::size_t>(r.out_group)]);
  }
  return total;
}

Macs total_flops_exact(const NetworkGraph& graph) { return total_flops_exact(graph, graph.gate_values()); }

Macs architecture_flops(const NetworkGraph& graph) {
  GateValues ones;
  for (const GateVector& gv : graph.gates()) ones.emplace_back(gv.size(), 1.0);
  return total_flops_exact(graph, ones);
}

double total_flops_surrogate(const NetworkGraph& graph, const GateValues& gates) {
  const GateValues eff = group_gates(graph, gates);
  double total = 0.0;
  for (const LayerFlopsRule& r : flops_rules(graph)) {
    total +=
        layer_flops_surrogate(r, eff[static_cast<std::size_t>(r.in_group)], eff[static_cast<std::size_t>(r.out_group)]);
  }
  return total;
}

Var total_flops_surrogate(Tape& tape, const NetworkGraph& graph, std::span<const Var> live_gates) {
  if (live_gates.size() != graph.gates().size()) {
    throw ShapeError("total_flops_surrogate: " + std::to_string(live_gates.size()) + " live gate vectors for " +
                     std::to_string(graph.gates().size()) + " gated layers");
  }
  // Per group: l1 norm of the effective gate as a [1] value, or a plain
  // number for fixed groups.
  struct GroupSum {
    Var var;
    double constant = 0.0;
  };
  std::vector<GroupSum> sums;
  for (const ChannelGroup& grp : graph.groups()) {
    GroupSum s;
    if (grp.fixed || grp.members.empty()) {
      s.constant = grp.channels;
    } else if (grp.members.size() == 1) {
      s.var = sum(live_gates[static_cast<std::size_t>(graph.layer(grp.members.front()).gate_index)]);
    } else {
      Var off;
      for (int m : grp.members) {
        const Var miss = one_minus(live_gates[static_cast<std::size_t>(graph.layer(m).gate_index)]);
        off = off.valid() ? mul(off, miss) : miss;
      }
      s.var = sum(one_minus(off));
    }
    sums.push_back(s);
  }
  Var total;
  double constant_total = 0.0;
  auto accumulate = [&total](const Var& term) { total = total.valid() ? add(total, term) : term; };
  for (const LayerFlopsRule& r : flops_rules(graph)) {
    const auto unit = static_cast<double>(r.unit());
    const GroupSum& out = sums[static_cast<std::size_t>(r.out_group)];
    if (r.kind == LayerKind::DepthwiseConv) {
      if (out.var.valid()) {
        accumulate(scale(out.var, unit));
      } else {
        constant_total += out.constant * unit;
      }
      continue;
    }
    const GroupSum& in = sums[static_cast<std::size_t>(r.in_group)];
    if (in.var.valid() && out.var.valid()) {
      accumulate(scale(mul(in.var, out.var), unit));
    } else if (in.var.valid()) {
      accumulate(scale(in.var, unit * out.constant));
    } else if (out.var.valid()) {
      accumulate(scale(out.var, unit * in.constant));
    } else {
      constant_total += in.constant * unit * out.constant;
    }
  }
  if (!total.valid()) return tape.constant(Tensor({1}, constant_total));
  return constant_total != 0.0 ? add_scalar(total, constant_total) : total;
}

std::vector<LayerFlopsRow> flops_table(const NetworkGraph& graph, const GateValues& gates) {
  const GateValues eff = group_gates(graph, gates);
  std::vector<LayerFlopsRow> rows;
  for (const LayerFlopsRule& r : flops_rules(graph)) {
    const auto& gin = eff[static_cast<std::size_t>(r.in_group)];
    const auto& gout = eff[static_cast<std::size_t>(r.out_group)];
    LayerFlopsRow row;
    row.layer_id = r.layer_id;
    row.kind = r.kind;
    row.active_in = static_cast<int>(l0(gin));
    row.active_out = static_cast<int>(l0(gout));
    row.exact = layer_flops_exact(r, gin, gout);
    row.surrogate = layer_flops_surrogate(r, gin, gout);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string flops_table_csv(const std::vector<LayerFlopsRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "layer_id,kind,active_in,active_out,exact_macs,surrogate\n";
  Macs exact = 0;
  double surrogate = 0.0;
  for (const LayerFlopsRow& r : rows) {
    os << r.layer_id << ',' << to_string(r.kind) << ',' << r.active_in << ',' << r.active_out << ',' << r.exact << ','
       << r.surrogate << '\n';
    exact += r.exact;
    surrogate += r.surrogate;
  }
  os << "total,,,," << exact << ',' << surrogate << '\n';
  return os.str();
}

}  // namespace dagger
