// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include "dagger/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dagger/autodiff.hpp"
#include "dagger/error.hpp"

namespace dagger {

EvalResult evaluate(NetworkGraph& graph, const Dataset& data, int batch_size) {
  EvalResult r;
  r.samples = data.size();
  if (data.size() == 0) return r;
  const int k = graph.num_classes();
  Tensor images;
  std::vector<int> labels;
  std::vector<int> idx;
  double loss = 0.0;
  int hit1 = 0, hit5 = 0;
  for (int start = 0; start < data.size(); start += batch_size) {
    const int end = std::min(data.size(), start + batch_size);
    idx.resize(static_cast<std::size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    gather_batch(data, idx, images, labels);
    Tape tape;
    const Var logits = forward(tape, graph, tape.view(images), ForwardOptions{});
    loss += softmax_cross_entropy(logits, labels).value()[0] * static_cast<double>(idx.size());
    const auto z = logits.value().data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const double* row = z.data() + b * static_cast<std::size_t>(k);
      const double target = row[labels[b]];
      // Rank of the true class; ties resolved in favour of the lower index.
      int better = 0;
      for (int j = 0; j < k; ++j)
        if (row[j] > target || (row[j] == target && j < labels[b])) ++better;
      hit1 += better == 0 ? 1 : 0;
      hit5 += better < 5 ? 1 : 0;
    }
  }
  r.loss = loss / data.size();
  r.top1 = static_cast<double>(hit1) / data.size();
  r.top5 = static_cast<double>(hit5) / data.size();
  return r;
}

double train_step(NetworkGraph& graph, const Tensor& images, std::span<const int> labels, const SgdOptions& opts) {
  auto params = graph.parameters();
  for (Parameter* p : params) p->zero_grad();
  Tape tape;
  ForwardOptions fo;
  fo.mode = NormMode::Train;
  fo.train_weights = true;
  const Var loss = softmax_cross_entropy(forward(tape, graph, tape.view(images), fo), labels);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw NumericError("training loss is not finite");
  tape.backward(loss);
  sgd_momentum_step(params, opts);
  return value;
}

std::vector<EpochStats> train(NetworkGraph& graph, const Dataset& data, const TrainOptions& opts,
                              const EpochCallback& on_epoch) {
  std::vector<EpochStats> stats;
  if (opts.epochs <= 0) return stats;
  BatchStream stream(data, opts.batch_size, opts.seed);
  const int per_epoch = std::max(1, stream.batches_per_epoch());
  const long total = static_cast<long>(per_epoch) * opts.epochs;
  Tensor images;
  std::vector<int> labels;
  long step = 0;
  for (int e = 0; e < opts.epochs; ++e) {
    EpochStats es;
    es.epoch = e;
    double sum = 0.0;
    for (int b = 0; b < per_epoch; ++b, ++step) {
      SgdOptions sgd = opts.sgd;
      if (opts.cosine) sgd.lr = cosine_lr(step, total, opts.sgd.lr);
      if (b == 0) es.lr = sgd.lr;
      stream.next(images, labels);
      sum += train_step(graph, images, labels, sgd);
    }
    es.train_loss = sum / per_epoch;
    stats.push_back(es);
    if (on_epoch) on_epoch(es);
  }
  return stats;
}

}  // namespace dagger
