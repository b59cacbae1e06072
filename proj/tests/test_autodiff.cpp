// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "dagger/autodiff.hpp"
#include "dagger/error.hpp"
#include "dagger/optim.hpp"
#include "dagger/rng.hpp"
#include "oracles.hpp"

namespace dagger {
namespace {

using testing::naive_conv2d;
using testing::naive_linear;
using testing::random_tensor;

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor run(const std::function<Var(Tape&)>& f) {
  Tape tape;
  return f(tape).value();
}

TEST(Rng, DeterministicAndSplit) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(42);
  Rng child = c.split();
  EXPECT_NE(child.next_u64(), Rng(42).next_u64());
  const auto perm = Rng(7).permutation(50);
  EXPECT_EQ(std::set<int>(perm.begin(), perm.end()).size(), 50u);
  Rng u(3);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
    EXPECT_LT(u.below(7), 7u);
  }
}

TEST(Rng, NormalMoments) {
  Rng r(11);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Tensor, ShapesAndAccess) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  t.at({1, 2}) = 4.0;
  EXPECT_EQ(t[5], 4.0);
  EXPECT_THROW(t.at({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  EXPECT_THROW(t.reshaped({4}), ShapeError);
  EXPECT_EQ(t.reshaped({3, 2}).dim(0), 3);
  EXPECT_THROW(t.grad(), Error);
  t.set_requires_grad(true);
  EXPECT_EQ(t.grad().size(), 6u);
}

TEST(Conv2d, ConstantInputSum) {
  const Tensor y = run([](Tape& t) {
    return conv2d(t.constant(Tensor::ones({1, 1, 3, 3})), t.constant(Tensor::ones({1, 1, 2, 2})), {});
  });
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.data()) EXPECT_EQ(v, 4.0);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  const Tensor x = random_tensor({2, 1, 4, 5}, rng);
  const Tensor y = run([&](Tape& t) { return conv2d(t.view(x), t.constant(Tensor::ones({1, 1, 1, 1})), {}); });
  EXPECT_EQ(max_abs_diff(x, y), 0.0);
}

TEST(Conv2d, MatchesNaiveLoop) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Tensor x = random_tensor({1, 3, 5, 5}, rng);
    const Tensor w = random_tensor({2, 3, 3, 3}, rng);
    const Tensor y = run([&](Tape& t) { return conv2d(t.view(x), t.view(w), {}); });
    EXPECT_LT(max_abs_diff(y, naive_conv2d(x, w, 1, 0, 1)), 1e-12);
  }
}

TEST(Conv2d, StridePaddingGroupsMatchNaiveLoop) {
  struct Case {
    Shape x, w;
    int stride, pad, groups;
  };
  for (const Case& c : {Case{{2, 4, 7, 6}, {6, 2, 3, 3}, 2, 1, 2}, Case{{3, 3, 6, 6}, {3, 1, 3, 3}, 1, 1, 3},
                        Case{{1, 2, 5, 8}, {4, 2, 1, 3}, 1, 2, 1}, Case{{2, 5, 9, 9}, {7, 5, 3, 3}, 3, 0, 1}}) {
    Rng rng(c.stride * 10 + c.groups);
    const Tensor x = random_tensor(c.x, rng), w = random_tensor(c.w, rng);
    const Tensor y = run([&](Tape& t) { return conv2d(t.view(x), t.view(w), {c.stride, c.pad, c.groups}); });
    EXPECT_LT(max_abs_diff(y, naive_conv2d(x, w, c.stride, c.pad, c.groups)), 1e-12);
  }
}

TEST(Conv2d, ShapeErrors) {
  Tape t;
  const Var x = t.constant(Tensor({1, 3, 4, 4}));
  EXPECT_THROW(conv2d(x, t.constant(Tensor({2, 2, 3, 3})), {}), ShapeError);
  EXPECT_THROW(conv2d(x, t.constant(Tensor({2, 3, 5, 5})), {}), ShapeError);
  EXPECT_THROW(conv2d(x, t.constant(Tensor({2, 1, 3, 3})), {1, 0, 3}), ShapeError);
}

TEST(Linear, IdentityAndZero) {
  Rng rng(2);
  const Tensor x = random_tensor({3, 4}, rng);
  Tensor eye({4, 4});
  for (int i = 0; i < 4; ++i) eye.at({i, i}) = 1.0;
  EXPECT_EQ(max_abs_diff(run([&](Tape& t) { return linear(t.view(x), t.view(eye), t.constant(Tensor({4}))); }), x),
            0.0);
  const Tensor b({2}, {0.5, -2.0});
  const Tensor y = run([&](Tape& t) { return linear(t.view(x), t.constant(Tensor({2, 4})), t.view(b)); });
  for (int n = 0; n < 3; ++n) {
    EXPECT_EQ(y.at({n, 0}), 0.5);
    EXPECT_EQ(y.at({n, 1}), -2.0);
  }
}

TEST(Linear, MatchesNaiveMatmul) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Tensor x = random_tensor({2, 3}, rng), w = random_tensor({4, 3}, rng), b = random_tensor({4}, rng);
    const Tensor y = run([&](Tape& t) { return linear(t.view(x), t.view(w), t.view(b)); });
    EXPECT_LT(max_abs_diff(y, naive_linear(x, w, &b)), 1e-12);
  }
}

TEST(Activation, Examples) {
  const Tensor r = run([](Tape& t) { return relu(t.constant(Tensor({3}, {-1.0, 0.0, 2.0}))); });
  EXPECT_EQ(r.vec(), (std::vector<double>{0.0, 0.0, 2.0}));
  const Tensor s = run([](Tape& t) { return sigmoid(t.constant(Tensor({3}, {0.0, 20.0, -20.0}))); });
  EXPECT_EQ(s[0], 0.5);
  EXPECT_NEAR(s[1], 1.0, 1e-8);
  EXPECT_NEAR(s[2], 0.0, 1e-8);
}

TEST(AvgPool, Examples) {
  const Tensor m = run([](Tape& t) { return avgpool(t.constant(Tensor({1, 1, 2, 2}, {1, 3, 5, 7})), 2, 2, 2, 2); });
  EXPECT_EQ(m.numel(), 1u);
  EXPECT_EQ(m[0], 4.0);
  const Tensor c = run([](Tape& t) { return avgpool(t.constant(Tensor({2, 3, 4, 4}, 2.5)), 2, 2, 2, 2); });
  for (double v : c.data()) EXPECT_EQ(v, 2.5);
  Tape t;
  EXPECT_THROW(avgpool(t.constant(Tensor({1, 1, 5, 5})), 2, 2, 2, 2), ShapeError);
}

TEST(AvgPool, GlobalMatchesSummation) {
  Rng rng(5);
  const Tensor k = random_tensor({4, 2, 3, 3}, rng);
  const Tensor y = run([&](Tape& t) { return global_avgpool(t.view(k)); });
  ASSERT_EQ(y.shape(), (Shape{4, 2, 1, 1}));
  for (int f = 0; f < 4; ++f)
    for (int c = 0; c < 2; ++c) {
      double s = 0.0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) s += k.at({f, c, i, j});
      EXPECT_LT(std::abs(y.at({f, c, 0, 0}) - s / 9.0), 1e-12);
    }
}

TEST(BatchNorm, NormalizedInputUnchanged) {
  // Exactly zero mean and unit biased variance per channel.
  Tensor x({4, 2, 1, 1}, {1, -1, -1, 1, 1, -1, -1, 1});
  RunningStats st{Tensor::zeros({2}), Tensor::ones({2})};
  const Tensor y = run([&](Tape& t) {
    return batchnorm(t.view(x), t.constant(Tensor::ones({2})), t.constant(Tensor::zeros({2})), st, {});
  });
  EXPECT_LT(max_abs_diff(x, y), 1e-5);
}

TEST(BatchNorm, ConstantChannelGivesBeta) {
  RunningStats st{Tensor::zeros({2}), Tensor::ones({2})};
  const Tensor y = run([&](Tape& t) {
    return batchnorm(t.constant(Tensor({3, 2, 2, 2}, 7.0)), t.constant(Tensor({2}, {2.0, 3.0})),
                     t.constant(Tensor({2}, {0.25, -0.5})), st, {});
  });
  for (int n = 0; n < 3; ++n)
    for (int i = 0; i < 4; ++i) {
      EXPECT_NEAR(y[static_cast<std::size_t>(n * 8 + i)], 0.25, 1e-12);
      EXPECT_NEAR(y[static_cast<std::size_t>(n * 8 + 4 + i)], -0.5, 1e-12);
    }
}

TEST(BatchNorm, MomentsAfterNormalization) {
  Rng rng(9);
  // Large spread keeps eps / var below 1e-6.
  Tensor x = random_tensor({8, 3, 4, 4}, rng, 10.0);
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] += 3.0;
  RunningStats st{Tensor::zeros({3}), Tensor::ones({3})};
  const Tensor y = run([&](Tape& t) {
    return batchnorm(t.view(x), t.constant(Tensor::ones({3})), t.constant(Tensor::zeros({3})), st, {});
  });
  for (int c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (int n = 0; n < 8; ++n)
      for (int i = 0; i < 16; ++i) {
        const double v = y[static_cast<std::size_t>((n * 3 + c) * 16 + i)];
        s += v;
        s2 += v * v;
      }
    EXPECT_NEAR(s / 128, 0.0, 1e-6);
    EXPECT_NEAR(s2 / 128, 1.0, 1e-6);
  }
}

TEST(BatchNorm, RunningStatsUpdateAndEval) {
  Tensor x({2, 1, 1, 2}, {1.0, 2.0, 3.0, 6.0});
  RunningStats st{Tensor::zeros({1}), Tensor::ones({1})};
  run([&](Tape& t) {
    return batchnorm(t.view(x), t.constant(Tensor::ones({1})), t.constant(Tensor::zeros({1})), st,
                     {NormMode::Train, 1e-5, 0.1});
  });
  // mean 3, unbiased var (4+1+0+9)/3.
  EXPECT_NEAR(st.mean[0], 0.3, 1e-12);
  EXPECT_NEAR(st.var[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-12);
  const Tensor y = run([&](Tape& t) {
    return batchnorm(t.view(x), t.constant(Tensor::ones({1})), t.constant(Tensor::zeros({1})), st,
                     {NormMode::Eval, 1e-5, 0.1});
  });
  EXPECT_NEAR(y[3], (6.0 - st.mean[0]) / std::sqrt(st.var[0] + 1e-5), 1e-12);
}

TEST(SoftmaxCrossEntropy, Examples) {
  const std::vector<int> labels{3};
  const Tensor u = run([&](Tape& t) { return softmax_cross_entropy(t.constant(Tensor({1, 10}, 0.7)), labels); });
  EXPECT_NEAR(u[0], std::log(10.0), 1e-12);
  Tensor sat({1, 10});
  sat[3] = 30.0;
  EXPECT_LT(run([&](Tape& t) { return softmax_cross_entropy(t.view(sat), labels); })[0], 1e-9);
  const std::vector<int> bad{10};
  Tape t;
  EXPECT_THROW(softmax_cross_entropy(t.view(sat), bad), ShapeError);
}

TEST(SoftmaxCrossEntropy, MatchesDirectFormula) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Tensor z = random_tensor({5, 7}, rng, 3.0);
    std::vector<int> labels(5);
    for (int& l : labels) l = static_cast<int>(rng.below(7));
    const double got = run([&](Tape& t) { return softmax_cross_entropy(t.view(z), labels); })[0];
    long double ref = 0.0L;
    for (int n = 0; n < 5; ++n) {
      long double s = 0.0L;
      for (int k = 0; k < 7; ++k) s += std::exp(static_cast<long double>(z.at({n, k})));
      ref += std::log(s) - z.at({n, labels[static_cast<std::size_t>(n)]});
    }
    EXPECT_LT(std::abs(got - static_cast<double>(ref / 5)), 1e-10);
  }
}

TEST(Backward, SumGivesOnes) {
  Rng rng(4);
  Tensor w = random_tensor({2, 3, 4}, rng);
  w.set_requires_grad(true);
  Tape t;
  t.backward(sum(t.leaf(w)));
  for (double g : w.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, ReusedTensorAccumulates) {
  Tensor w({3}, {1.0, -2.0, 0.5});
  w.set_requires_grad(true);
  Tape t;
  const Var v = t.leaf(w);
  t.backward(add(sum(scale(v, 3.0)), sum(mul(v, v))));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(w.grad()[i], 3.0 + 2.0 * w[i]);
}

TEST(Backward, ViewsAndConstantsGetNoGradient) {
  Tensor a({2}, {1.0, 2.0});
  Tape t;
  const Var v = t.view(a);
  EXPECT_FALSE(v.needs_grad());
  EXPECT_FALSE(a.requires_grad());
  t.backward(sum(mul(v, t.constant(Tensor({2}, 3.0)))));
  EXPECT_FALSE(a.requires_grad());
}

TEST(Backward, RejectsNonScalar) {
  Tensor a({2}, 1.0);
  a.set_requires_grad(true);
  Tape t;
  EXPECT_THROW(t.backward(scale(t.leaf(a), 2.0)), ShapeError);
}

class GradientSuite : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientSuite, FiniteDifferences) {
  const auto cases = testing::gradient_cases();
  const testing::GradCase& c = cases.at(GetParam());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const testing::GradCheck r = c.run(seed);
    EXPECT_LT(r.rel_error, 1e-4) << c.name << " seed " << seed << " " << r.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientSuite, ::testing::Range<std::size_t>(0, testing::gradient_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return testing::gradient_cases()[info.param].name;
                         });

TEST(Sgd, PlainStep) {
  Parameter p(Tensor({1}, 1.0));
  p.value.grad()[0] = 0.5;
  Parameter* ps[] = {&p};
  sgd_momentum_step(ps, {0.1, 0.0, false, 0.0});
  EXPECT_DOUBLE_EQ(p.value[0], 0.95);
}

TEST(Sgd, ZeroGradientIsFixedPoint) {
  Parameter p(Tensor({3}, {1.0, -2.0, 3.0}));
  Parameter* ps[] = {&p};
  sgd_momentum_step(ps, {0.1, 0.9, true, 0.0});
  EXPECT_EQ(p.value.vec(), (std::vector<double>{1.0, -2.0, 3.0}));
}

TEST(Sgd, MomentumRecurrence) {
  for (bool nesterov : {false, true}) {
    Parameter p(Tensor({2}, {1.0, -0.5}));
    Parameter* ps[] = {&p};
    const double lr = 0.1, mu = 0.9, wd = 0.01;
    double w[2] = {1.0, -0.5}, buf[2] = {0.0, 0.0};
    const double grads[2][2] = {{0.3, -0.2}, {0.1, 0.4}};
    for (int step = 0; step < 2; ++step) {
      for (int i = 0; i < 2; ++i) {
        p.value.grad()[static_cast<std::size_t>(i)] = grads[step][i];
        const double d = grads[step][i] + wd * w[i];
        buf[i] = mu * buf[i] + d;
        w[i] -= lr * (nesterov ? d + mu * buf[i] : buf[i]);
      }
      sgd_momentum_step(ps, {lr, mu, nesterov, wd});
    }
    for (std::size_t i = 0; i < 2; ++i) EXPECT_LT(std::abs(p.value[i] - w[i]), 1e-12);
  }
}

TEST(CosineLr, Boundaries) {
  EXPECT_EQ(cosine_lr(0, 100, 0.1), 0.1);
  EXPECT_EQ(cosine_lr(100, 100, 0.1), 0.0);
  EXPECT_NEAR(cosine_lr(50, 100, 0.1), 0.05, 1e-15);
  EXPECT_THROW(cosine_lr(101, 100, 0.1), Error);
}

}  // namespace
}  // namespace dagger
