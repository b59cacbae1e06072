// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_TRAINING_HPP
#define DAGGER_TRAINING_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dagger/data.hpp"
#include "dagger/graph.hpp"
#include "dagger/optim.hpp"

namespace dagger {

struct EvalResult {
  double loss = 0.0;
  double top1 = 0.0;  // fraction in [0,1]
  double top5 = 0.0;  // only meaningful when classes >= 5
  int samples = 0;
};

/// Eval-mode forward with stored gates over the whole dataset.
EvalResult evaluate(NetworkGraph& graph, const Dataset& data, int batch_size = 256);

/// One SGD step on all weights (train-mode batchnorm, stored gates, cross
/// entropy). Returns the batch loss; throws NumericError when not finite.
double train_step(NetworkGraph& graph, const Tensor& images, std::span<const int> labels, const SgdOptions& opts);

struct TrainOptions {
  int epochs = 5;
  int batch_size = 64;
  SgdOptions sgd{0.05, 0.9, true, 1e-4};
  /// Cosine-anneal the learning rate per step over all epochs.
  bool cosine = true;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double lr = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Plain supervised training; returns per-epoch mean losses.
std::vector<EpochStats> train(NetworkGraph& graph, const Dataset& data, const TrainOptions& opts,
                              const EpochCallback& on_epoch = {});

}  // namespace dagger

#endif  // DAGGER_TRAINING_HPP
