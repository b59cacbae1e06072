// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_AUTODIFF_HPP
#define DAGGER_AUTODIFF_HPP

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dagger/tensor.hpp"

namespace dagger {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the
/// tape is alive.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// True when a gradient must be propagated through this value.
  bool needs_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in creation order, which is a
/// topological order of the computation, and `backward` replays them in
/// reverse. Leaves bound to a `Tensor` with `requires_grad` receive their
/// gradient additively in `Tensor::grad()`.
class Tape {
 public:
  /// Called with the tape and the node id whose gradient is complete.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a value that never receives a gradient.
  Var constant(Tensor value);
  /// Records a reference to `tensor`; the tensor must outlive the tape and
  /// stay unmodified until `backward` returns.
  Var leaf(Tensor& tensor);
  /// Records a reference to `tensor` that never receives a gradient.
  Var view(const Tensor& tensor);

  /// Records an op result. `fn` is dropped when no input needs a gradient.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  void backward(const Var& loss);

  const Tensor& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer of node `id`, allocated on first use.
  std::span<double> grad(std::size_t id);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor* sink = nullptr;
    std::vector<double> grad;
    BackwardFn backward;
    bool needs_grad = false;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

enum class ActivationKind { Relu, Sigmoid };
enum class NormMode { Train, Eval };

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// Running statistics of a batch-normalization layer.
struct RunningStats {
  Tensor mean;
  Tensor var;
};

struct BatchNormOptions {
  NormMode mode = NormMode::Train;
  double eps = 1e-5;
  double momentum = 0.1;
};

// Differentiable operations. All of them record on the tape of their first
// argument; mixing tapes is an error.

Var conv2d(const Var& input, const Var& weight, const Conv2dOptions& opts, const std::string& name = "conv2d");
/// Adds `bias[c]` to channel c of an NCHW or [N,C] tensor.
Var bias_add(const Var& input, const Var& bias);
/// input [N,d] x weight [out,d]^T + bias [out]. `bias` may be an invalid Var.
Var linear(const Var& input, const Var& weight, const Var& bias, const std::string& name = "linear");
Var activation(const Var& input, ActivationKind kind);
inline Var relu(const Var& x) { return activation(x, ActivationKind::Relu); }
inline Var sigmoid(const Var& x) { return activation(x, ActivationKind::Sigmoid); }
/// Mean over non-overlapping or strided windows of the last two axes. The
/// windows must tile the input exactly.
Var avgpool(const Var& input, int window_h, int window_w, int stride_h, int stride_w);
/// Mean over the whole spatial extent: [N,C,H,W] -> [N,C,1,1].
Var global_avgpool(const Var& input);
/// Per-channel normalization of NCHW or [N,C]. Train mode normalizes with
/// batch statistics (biased variance) and updates `stats` with the unbiased
/// variance; eval mode uses `stats`.
Var batchnorm(const Var& input, const Var& gamma, const Var& beta, RunningStats& stats, const BatchNormOptions& opts);
/// Mean of -log softmax(logits)[label] over the batch.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
/// 1 - a, elementwise.
Var one_minus(const Var& a);
/// Sum of all elements as a [1] tensor.
Var sum(const Var& a);
Var reshape(const Var& a, Shape shape);
/// Multiplies channel c of an NCHW or [N,C] tensor by `gates[c]`.
Var channel_scale(const Var& input, const Var& gates);

}  // namespace dagger

#endif  // DAGGER_AUTODIFF_HPP
