// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_OPTIM_HPP
#define DAGGER_OPTIM_HPP

#include <span>
#include <vector>

#include "dagger/tensor.hpp"

namespace dagger {

/// Trainable tensor plus its SGD momentum buffer.
struct Parameter {
  Tensor value;
  std::vector<double> momentum;

  Parameter() = default;
  explicit Parameter(Tensor t) : value(std::move(t)) {
    value.set_requires_grad(true);
    momentum.assign(value.numel(), 0.0);
  }

  bool empty() const { return value.empty(); }
  void zero_grad() { value.zero_grad(); }
};

struct SgdOptions {
  double lr = 0.001;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
};

/// One SGD step: d = grad + wd * w; buf = momentum * buf + d;
/// step = nesterov ? d + momentum * buf : buf; w -= lr * step.
void sgd_momentum_step(std::span<Parameter* const> params, const SgdOptions& opts);

/// lr0 * (1 + cos(pi * step / total_steps)) / 2, for 0 <= step <= total_steps.
double cosine_lr(long step, long total_steps, double lr0);

}  // namespace dagger

#endif  // DAGGER_OPTIM_HPP
