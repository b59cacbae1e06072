// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include "dagger/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "dagger/error.hpp"

namespace dagger {

void sgd_momentum_step(std::span<Parameter* const> params, const SgdOptions& opts) {
  for (Parameter* p : params) {
    if (!p->value.requires_grad()) throw Error("sgd_momentum_step: parameter has no gradient buffer");
    if (p->momentum.size() != p->value.numel()) p->momentum.assign(p->value.numel(), 0.0);
    auto w = p->value.data();
    const auto g = p->value.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = g[i] + opts.weight_decay * w[i];
      double& buf = p->momentum[i];
      buf = opts.momentum * buf + d;
      const double step = opts.nesterov ? d + opts.momentum * buf : buf;
      w[i] -= opts.lr * step;
    }
  }
}

double cosine_lr(long step, long total_steps, double lr0) {
  if (total_steps <= 0 || step < 0 || step > total_steps) {
    throw Error("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  if (step == total_steps) return 0.0;
  return lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps))) / 2.0;
}

}  // namespace dagger
