// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include <cmath>

#include "dagger/error.hpp"
#include "dagger/flops.hpp"
#include "oracles.hpp"

namespace dagger {
namespace {

using testing::enumerate_macs;
using testing::random_binary_gates;
using testing::toy_graph;

const char* const kNets[] = {"chain2", "residual", "depthwise", "vgg6", "chain3"};

LayerFlopsRule conv_rule(int k, int h, int w) {
  LayerFlopsRule r;
  r.kind = LayerKind::Conv;
  r.kernel_h = r.kernel_w = k;
  r.out_h = h;
  r.out_w = w;
  return r;
}

TEST(SkipUnion, Examples) {
  const std::vector<std::vector<double>> a{{1, 0}, {0, 0}};
  EXPECT_EQ(effective_skip_gates(a), (std::vector<double>{1, 0}));
  const std::vector<std::vector<double>> b{{0.5, 0.2}, {0.5, 0.0}};
  const auto u = effective_skip_gates(b);
  EXPECT_NEAR(u[0], 0.75, 1e-15);
  EXPECT_NEAR(u[1], 0.2, 1e-15);
  const std::vector<std::vector<double>> bad{{1, 0}, {0}};
  EXPECT_THROW(effective_skip_gates(bad), ShapeError);
}

TEST(SkipUnion, ExhaustiveBinaryIsOr) {
  for (int len = 1; len <= 3; ++len) {
    for (int members = 2; members <= 3; ++members) {
      const int bits = len * members;
      for (int m = 0; m < (1 << bits); ++m) {
        std::vector<std::vector<double>> v(static_cast<std::size_t>(members), std::vector<double>(len));
        for (int b = 0; b < bits; ++b) v[b / len][b % len] = (m >> b) & 1;
        const auto u = effective_skip_gates(v);
        for (int c = 0; c < len; ++c) {
          bool any = false;
          for (int k = 0; k < members; ++k) any = any || v[k][c] != 0.0;
          EXPECT_EQ(u[c], any ? 1.0 : 0.0);
        }
      }
    }
  }
}

TEST(LayerFlops, Examples) {
  const LayerFlopsRule one = conv_rule(1, 2, 2);
  EXPECT_EQ(layer_flops_exact(one, std::vector<double>(4, 1.0), std::vector<double>(8, 1.0)), 128u);
  const LayerFlopsRule three = conv_rule(3, 4, 4);
  EXPECT_EQ(layer_flops_exact(three, std::vector<double>(3, 1.0), std::vector<double>(2, 1.0)), 864u);
  EXPECT_EQ(layer_flops_exact(three, std::vector<double>(3, 0.0), std::vector<double>(2, 1.0)), 0u);
  // Surrogate is the l1 product.
  LayerFlopsRule unit = conv_rule(1, 1, 1);
  EXPECT_EQ(layer_flops_surrogate(unit, std::vector<double>{0.5, 0.5}, std::vector<double>{1.0}), 1.0);
}

TEST(LayerFlops, MatchesNaiveConvEnumeration) {
  // 3x3 conv, 3 in, 2 out on a 4x4 input with padding 1.
  NetworkGraph g = build_graph(parse_network_config("input = 3x4x4\n[c]\nkind = conv\nfilters = 2\nkernel = 3\n"
                                                    "padding = 1\n[p]\nkind = avgpool\nglobal = true\n"
                                                    "[fc]\nkind = linear\nfilters = 2\n"));
  const auto rules = flops_rules(g);
  const std::vector<double> in(3, 1.0), out(2, 1.0);
  EXPECT_EQ(layer_flops_exact(rules[0], in, out), 864u);
  GateValues gates = g.gate_values();
  EXPECT_EQ(total_flops_exact(g, gates), enumerate_macs(g, gates));
}

TEST(LayerFlops, SurrogateEqualsExactOnBinaryGates) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    LayerFlopsRule r = conv_rule(1 + static_cast<int>(rng.below(3)), 1 + static_cast<int>(rng.below(5)),
                                 1 + static_cast<int>(rng.below(5)));
    std::vector<double> in(1 + rng.below(6)), out(1 + rng.below(6));
    for (double& v : in) v = static_cast<double>(rng.below(2));
    for (double& v : out) v = static_cast<double>(rng.below(2));
    EXPECT_EQ(layer_flops_surrogate(r, in, out), static_cast<double>(layer_flops_exact(r, in, out)));
  }
}

TEST(LayerFlops, SurrogateGradientMatchesFiniteDifferences) {
  for (const char* name : {"chain2", "residual", "depthwise"}) {
    const NetworkGraph g = toy_graph(name);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng(seed);
      std::vector<Tensor> gates;
      for (const GateVector& gv : g.gates()) {
        Tensor t({static_cast<int>(gv.size())});
        for (double& v : t.data()) v = rng.uniform(0.0, 1.5);
        gates.push_back(std::move(t));
      }
      const auto r = testing::check_gradients(
          [&](Tape& tape, const std::vector<Var>& v) { return total_flops_surrogate(tape, g, v); }, gates, 1e-5, 1.0);
      // Absolute gradient error in MACs per gate, relative to its magnitude.
      EXPECT_LT(r.rel_error, 1e-6) << name << " " << r.worst;
    }
  }
}

TEST(TotalFlops, ChainHandCount) {
  const NetworkGraph g = toy_graph("chain2");
  // conv1 3*9*36*4, conv2 4*9*36*6, fc 6*3.
  const Macs c0 = 3888 + 7776 + 18;
  EXPECT_EQ(total_flops_exact(g), c0);
  EXPECT_EQ(architecture_flops(g), c0);
  EXPECT_EQ(total_flops_exact(toy_graph("vgg6")), 161600u);
}

TEST(TotalFlops, ZeroingOneLayerMatchesOracle) {
  for (const char* name : kNets) {
    const NetworkGraph g = toy_graph(name);
    for (std::size_t gi = 0; gi < g.gates().size(); ++gi) {
      GateValues gates = g.gate_values();
      for (double& v : gates[gi]) v = 0.0;
      EXPECT_EQ(total_flops_exact(g, gates), enumerate_macs(g, gates)) << name << " gate " << gi;
      // Inside a union group the other members keep the channels alive.
      const ChannelGroup& grp = g.groups()[static_cast<std::size_t>(g.layer(g.gated_layers()[gi]).group)];
      if (grp.members.size() == 1) {
        EXPECT_LT(total_flops_exact(g, gates), total_flops_exact(g)) << name << " gate " << gi;
      } else {
        EXPECT_EQ(total_flops_exact(g, gates), total_flops_exact(g)) << name << " gate " << gi;
      }
    }
  }
}

TEST(TotalFlops, RandomBinaryGatesMatchOracleAndSurrogate) {
  for (const char* name : kNets) {
    const NetworkGraph g = toy_graph(name);
    Rng rng(17);
    for (int t = 0; t < 100; ++t) {
      const GateValues gates = random_binary_gates(g, rng, rng.uniform());
      const Macs exact = total_flops_exact(g, gates);
      EXPECT_EQ(exact, enumerate_macs(g, gates)) << name;
      EXPECT_EQ(total_flops_surrogate(g, gates), static_cast<double>(exact)) << name;
    }
  }
}

TEST(TotalFlops, PureWithRespectToGates) {
  const NetworkGraph g = toy_graph("residual");
  const GateValues gates = g.gate_values();
  const Macs a = total_flops_exact(g, gates);
  EXPECT_EQ(total_flops_exact(g, gates), a);
  EXPECT_EQ(g.gate_values(), gates);
}

TEST(Surrogate, AllOnesEqualsC0) {
  for (const char* name : kNets) {
    const NetworkGraph g = toy_graph(name);
    const double c0 = static_cast<double>(total_flops_exact(g));
    EXPECT_EQ(total_flops_surrogate(g, g.gate_values()), c0) << name;
    Tape tape;
    std::vector<Var> live;
    for (const GateVector& gv : g.gates()) live.push_back(tape.constant(Tensor({static_cast<int>(gv.size())}, 1.0)));
    EXPECT_EQ(total_flops_surrogate(tape, g, live).value()[0], c0) << name;
  }
}

TEST(Surrogate, HalvingGatesInOneByOneChain) {
  const NetworkGraph g = build_graph(parse_network_config(
      "input = 4x3x3\n[a]\nkind = conv\nfilters = 5\n[b]\nkind = conv\nfilters = 6\n[c]\nkind = conv\nfilters = 7\n"
      "[p]\nkind = avgpool\nglobal = true\n[fc]\nkind = linear\nfilters = 2\n"));
  GateValues half = g.gate_values();
  for (auto& v : half)
    for (double& x : v) x = 0.5;
  // a: input fixed, output halved; b and c: both sides halved; fc: input halved.
  const double a = 4.0 * 5 * 9, b = 5.0 * 6 * 9, c = 6.0 * 7 * 9, fc = 7.0 * 2;
  EXPECT_NEAR(total_flops_surrogate(g, half), 0.5 * a + 0.25 * b + 0.25 * c + 0.5 * fc, 1e-9);
  EXPECT_EQ(total_flops_exact(g), static_cast<Macs>(a + b + c + fc));
}

TEST(Surrogate, ZeroGatesGiveZeroForFullyGatedNet) {
  const NetworkGraph g = build_graph(parse_network_config(
      "input = 2x3x3\ngate_classifier = true\n[a]\nkind = conv\nfilters = 3\n[p]\nkind = avgpool\nglobal = true\n"
      "[fc]\nkind = linear\nfilters = 2\n"));
  GateValues zero = g.gate_values();
  for (auto& v : zero)
    for (double& x : v) x = 0.0;
  EXPECT_EQ(total_flops_surrogate(g, zero), 0.0);
  EXPECT_EQ(total_flops_exact(g, zero), 0u);
}

TEST(Surrogate, LiveGateCountMismatch) {
  const NetworkGraph g = toy_graph("chain2");
  Tape tape;
  std::vector<Var> live{tape.constant(Tensor({4}, 1.0))};
  EXPECT_THROW(total_flops_surrogate(tape, g, live), ShapeError);
}

TEST(Budget, Arithmetic) {
  const FlopsBudget a = budget_from_acceleration(4100000000ULL, 2.0);
  EXPECT_EQ(a.target, 2050000000.0);
  EXPECT_EQ(a.pretrained, 4100000000ULL);
  EXPECT_EQ(budget_from_acceleration(400, 1.0).target, 400.0);
  EXPECT_EQ(budget_from_acceleration(400, 4.0).target, 100.0);
  EXPECT_THROW(budget_from_acceleration(400, 0.5), ConfigError);
  EXPECT_EQ(budget_from_target(400, 120).target, 120.0);
  EXPECT_THROW(budget_from_target(400, 0), ConfigError);
  EXPECT_THROW(budget_from_target(400, 401), ConfigError);
}

TEST(FlopsTable, ColumnsAndTotals) {
  const NetworkGraph g = toy_graph("residual");
  Rng rng(2);
  const GateValues gates = random_binary_gates(g, rng, 0.6);
  const auto rows = flops_table(g, gates);
  Macs sum = 0;
  for (const LayerFlopsRow& r : rows) {
    EXPECT_EQ(r.surrogate, static_cast<double>(r.exact)) << r.layer_id;
    sum += r.exact;
  }
  EXPECT_EQ(sum, total_flops_exact(g, gates));
  const std::string csv = flops_table_csv(rows);
  EXPECT_EQ(csv.rfind("layer_id,kind,active_in,active_out,exact_macs,surrogate\n", 0), 0u);
  EXPECT_NE(csv.find("total,,,," + std::to_string(sum) + ","), std::string::npos);
}

}  // namespace
}  // namespace dagger
