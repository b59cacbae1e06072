// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include <numeric>

#include "dagger/dagger_module.hpp"
#include "dagger/flops.hpp"
#include "oracles.hpp"

#ifndef DAGGER_CONFIG_DIR
#error "DAGGER_CONFIG_DIR must point at configs/"
#endif

namespace dagger::testing {

namespace {

// Projects `y` onto a fixed random direction so every output element
// contributes to the scalar loss.
Var project(Tape& tape, const Var& y, Rng& rng) {
  return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

using Build = std::function<Var(Tape&, const std::vector<Var>&)>;

GradCase unary(std::string name, std::vector<Shape> shapes, std::function<Var(const std::vector<Var>&)> op,
               double gap = 0.0) {
  return {std::move(name), [shapes, op, gap](std::uint64_t seed) {
            Rng rng(seed);
            std::vector<Tensor> inputs;
            for (const Shape& s : shapes) inputs.push_back(random_tensor(s, rng, 1.0, gap));
            const std::uint64_t proj_seed = rng.next_u64();
            return check_gradients(
                [&](Tape& tape, const std::vector<Var>& v) {
                  Rng r(proj_seed);
                  return project(tape, op(v), r);
                },
                inputs);
          }};
}

}  // namespace

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  cases.push_back(unary("conv2d", {{2, 3, 5, 5}, {2, 3, 3, 3}},
                        [](const std::vector<Var>& v) { return conv2d(v[0], v[1], {1, 0, 1}); }));
  cases.push_back(unary("conv2d_stride_pad", {{2, 2, 5, 4}, {3, 2, 3, 2}},
                        [](const std::vector<Var>& v) { return conv2d(v[0], v[1], {2, 1, 1}); }));
  cases.push_back(unary("conv2d_grouped", {{2, 4, 4, 4}, {6, 2, 3, 3}},
                        [](const std::vector<Var>& v) { return conv2d(v[0], v[1], {1, 1, 2}); }));
  cases.push_back(unary("conv2d_depthwise", {{2, 3, 5, 5}, {3, 1, 3, 3}},
                        [](const std::vector<Var>& v) { return conv2d(v[0], v[1], {2, 1, 3}); }));
  cases.push_back(unary("bias_add_nchw", {{2, 3, 2, 2}, {3}},
                        [](const std::vector<Var>& v) { return bias_add(v[0], v[1]); }));
  cases.push_back(unary("bias_add_nc", {{3, 4}, {4}}, [](const std::vector<Var>& v) { return bias_add(v[0], v[1]); }));
  cases.push_back(unary("linear", {{3, 5}, {4, 5}, {4}},
                        [](const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); }));
  cases.push_back(unary("linear_nobias", {{2, 3}, {4, 3}},
                        [](const std::vector<Var>& v) { return linear(v[0], v[1], Var{}); }));
  // Inputs kept 1e-3 away from the kink.
  cases.push_back(unary(
      "relu", {{2, 3, 3}}, [](const std::vector<Var>& v) { return relu(v[0]); }, 1e-3));
  cases.push_back(unary("sigmoid", {{2, 3, 3}}, [](const std::vector<Var>& v) { return sigmoid(v[0]); }));
  cases.push_back(unary("avgpool", {{2, 2, 4, 6}},
                        [](const std::vector<Var>& v) { return avgpool(v[0], 2, 3, 2, 3); }));
  cases.push_back(unary("avgpool_strided", {{1, 2, 5, 5}},
                        [](const std::vector<Var>& v) { return avgpool(v[0], 3, 3, 2, 2); }));
  cases.push_back(unary("global_avgpool", {{2, 3, 3, 2}},
                        [](const std::vector<Var>& v) { return global_avgpool(v[0]); }));
  cases.push_back(unary("batchnorm_train", {{4, 3, 2, 2}, {3}, {3}}, [](const std::vector<Var>& v) {
    static RunningStats stats{Tensor::zeros({3}), Tensor::ones({3})};
    return batchnorm(v[0], v[1], v[2], stats, {NormMode::Train, 1e-5, 0.1});
  }));
  cases.push_back(unary("batchnorm_train_nc", {{5, 4}, {4}, {4}}, [](const std::vector<Var>& v) {
    static RunningStats stats{Tensor::zeros({4}), Tensor::ones({4})};
    return batchnorm(v[0], v[1], v[2], stats, {NormMode::Train, 1e-5, 0.1});
  }));
  cases.push_back(unary("batchnorm_eval", {{2, 3, 2, 2}, {3}, {3}}, [](const std::vector<Var>& v) {
    static RunningStats stats{Tensor({3}, {0.2, -0.1, 0.4}), Tensor({3}, {0.5, 1.5, 2.0})};
    return batchnorm(v[0], v[1], v[2], stats, {NormMode::Eval, 1e-5, 0.1});
  }));
  cases.push_back({"softmax_cross_entropy", [](std::uint64_t seed) {
                     Rng rng(seed);
                     std::vector<Tensor> in{random_tensor({4, 5}, rng, 2.0)};
                     std::vector<int> labels(4);
                     for (int& l : labels) l = static_cast<int>(rng.below(5));
                     return check_gradients(
                         [&](Tape&, const std::vector<Var>& v) { return softmax_cross_entropy(v[0], labels); }, in);
                   }});
  cases.push_back(unary("add", {{2, 3}, {2, 3}}, [](const std::vector<Var>& v) { return add(v[0], v[1]); }));
  cases.push_back(unary("sub", {{2, 3}, {2, 3}}, [](const std::vector<Var>& v) { return sub(v[0], v[1]); }));
  cases.push_back(unary("mul", {{2, 3}, {2, 3}}, [](const std::vector<Var>& v) { return mul(v[0], v[1]); }));
  cases.push_back(unary("scale", {{2, 3}}, [](const std::vector<Var>& v) { return scale(v[0], -1.7); }));
  cases.push_back(unary("add_scalar", {{2, 3}}, [](const std::vector<Var>& v) { return add_scalar(v[0], 0.3); }));
  cases.push_back(unary("one_minus", {{2, 3}}, [](const std::vector<Var>& v) { return one_minus(v[0]); }));
  cases.push_back(unary("sum", {{2, 3}}, [](const std::vector<Var>& v) { return sum(v[0]); }));
  cases.push_back(unary("reshape", {{2, 3, 2}}, [](const std::vector<Var>& v) { return reshape(v[0], {3, 4}); }));
  cases.push_back(unary("channel_scale_nchw", {{2, 3, 2, 2}, {3}},
                        [](const std::vector<Var>& v) { return channel_scale(v[0], v[1]); }));
  cases.push_back(unary("channel_scale_nc", {{3, 4}, {4}},
                        [](const std::vector<Var>& v) { return channel_scale(v[0], v[1]); }));
  cases.push_back(unary("shared_input", {{2, 3}}, [](const std::vector<Var>& v) {
    return mul(add(v[0], sigmoid(v[0])), scale(v[0], 0.5));
  }));

  cases.push_back({"dagger_generate_gates", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const int n = 6, h = 4;
                     DaggerParams p;
                     p.layer_id = "conv";
                     p.fc1_weight = Parameter(random_tensor({h, n}, rng));
                     p.fc1_bias = Parameter(random_tensor({h}, rng, 0.5));
                     p.fc2_weight = Parameter(random_tensor({n, h}, rng));
                     p.fc2_bias = Parameter(random_tensor({n}, rng));
                     p.offset = rng.uniform();
                     const Tensor kernel = random_tensor({n, 3, 3, 3}, rng);
                     std::vector<bool> active(n, true);
                     active[rng.below(n)] = false;
                     const Tensor r = random_tensor({n}, rng);
                     return check_parameter_gradients(
                         [&](Tape& tape, bool train) {
                           return sum(mul(generate_gates(tape, p, kernel, active, train), tape.constant(r)));
                         },
                         {&p.fc1_weight.value, &p.fc1_bias.value, &p.fc2_weight.value, &p.fc2_bias.value});
                   }});

  for (const char* net : {"chain2", "residual", "depthwise", "chain3"}) {
    cases.push_back({std::string("flops_surrogate_") + net, [net](std::uint64_t seed) {
                       const NetworkGraph g =
                           build_graph(load_network_config(std::string(DAGGER_CONFIG_DIR) + "/" + net + ".net"), 0);
                       Rng rng(seed);
                       std::vector<Tensor> gates;
                       for (const GateVector& gv : g.gates()) {
                         Tensor t({static_cast<int>(gv.size())});
                         for (double& x : t.data()) x = rng.uniform(0.0, 1.5);
                         gates.push_back(std::move(t));
                       }
                       // The surrogate is in MACs; scale to order one.
                       const double c0 = static_cast<double>(total_flops_exact(g));
                       return check_gradients(
                           [&](Tape& tape, const std::vector<Var>& v) {
                             return scale(total_flops_surrogate(tape, g, v), 1.0 / c0);
                           },
                           gates);
                     }});
  }

  cases.push_back({"gated_forward_weights", [](std::uint64_t seed) {
                     NetworkGraph g =
                         build_graph(load_network_config(std::string(DAGGER_CONFIG_DIR) + "/residual.net"), seed);
                     Rng rng(seed + 1000);
                     for (GateVector& gv : g.gates())
                       for (double& x : gv.values) x = rng.uniform(0.2, 1.2);
                     const Tensor x = random_tensor({2, 3, 6, 6}, rng);
                     const std::vector<int> labels{0, 2};
                     std::vector<Tensor*> params;
                     for (Parameter* p : g.parameters()) params.push_back(&p->value);
                     return check_parameter_gradients(
                         [&](Tape& tape, bool train) {
                           ForwardOptions fo;
                           fo.mode = NormMode::Eval;
                           fo.train_weights = train;
                           return softmax_cross_entropy(forward(tape, g, tape.view(x), fo), labels);
                         },
                         params);
                   }});
  return cases;
}

}  // namespace dagger::testing
