// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include "dagger/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "dagger/error.hpp"

namespace dagger {

// ---------------------------------------------------------------------------
// Var / Tape
// ---------------------------------------------------------------------------

const Tensor& Var::value() const {
  if (!tape_) throw Error("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::needs_grad() const { return tape_ && tape_->needs_grad(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor& tensor) {
  Node n;
  n.ref = &tensor;
  if (tensor.requires_grad()) {
    n.sink = &tensor;
    n.needs_grad = true;
  }
  return push(std::move(n));
}

Var Tape::view(const Tensor& tensor) {
  Node n;
  n.ref = &tensor;
  return push(std::move(n));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (const Var& in : inputs) {
    if (!in.valid()) continue;
    if (in.tape() != this) throw Error("op inputs recorded on different tapes");
    n.needs_grad = n.needs_grad || needs_grad(in.id());
  }
  if (n.needs_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.ref ? *n.ref : n.owned;
}

std::span<double> Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).numel(), 0.0);
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw Error("backward on a Var from another tape");
  if (loss.value().numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!needs_grad(loss.id())) return;
  grad(loss.id())[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (Node& n : nodes_) {
    if (!n.sink || n.grad.empty()) continue;
    auto g = n.sink->grad();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
  }
}

namespace {

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw Error("op applied to an unbound Var");
  return *v.tape();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Inner spatial size of an NCHW or [N,C] tensor.
std::size_t inner_size(const Shape& s) {
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
  return inner;
}

struct ConvGeom {
  int n, c, h, w;
  int o, cg, og, kh, kw;
  int stride, pad, groups;
  int ho, wo;
  std::size_t k() const { return static_cast<std::size_t>(cg) * kh * kw; }
  std::size_t p() const { return static_cast<std::size_t>(ho) * wo; }
};

// Dot product with four interleaved partial sums combined in a fixed order.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// C[m][:] += sum_k A(m,k) * B[k][:] for row-major B [K,N] and C [M,N]; A is
// addressed as a[m * ars + k * acs]. Tiled over columns with four rows of C
// per pass; every C entry accumulates over k in increasing order.
void gemm_acc(std::size_t M, std::size_t K, std::size_t N, const double* a, std::size_t ars, std::size_t acs,
              const double* b, double* c) {
  constexpr std::size_t kTile = 256;
  for (std::size_t n0 = 0; n0 < N; n0 += kTile) {
    const std::size_t nn = std::min(kTile, N - n0);
    std::size_t m = 0;
    for (; m + 4 <= M; m += 4) {
      double* c0 = c + m * N + n0;
      double* c1 = c0 + N;
      double* c2 = c1 + N;
      double* c3 = c2 + N;
      for (std::size_t k = 0; k < K; ++k) {
        const double a0 = a[m * ars + k * acs];
        const double a1 = a[(m + 1) * ars + k * acs];
        const double a2 = a[(m + 2) * ars + k * acs];
        const double a3 = a[(m + 3) * ars + k * acs];
        const double* br = b + k * N + n0;
        for (std::size_t j = 0; j < nn; ++j) {
          const double v = br[j];
          c0[j] += a0 * v;
          c1[j] += a1 * v;
          c2[j] += a2 * v;
          c3[j] += a3 * v;
        }
      }
    }
    for (; m < M; ++m) {
      double* cr = c + m * N + n0;
      for (std::size_t k = 0; k < K; ++k) {
        const double av = a[m * ars + k * acs];
        const double* br = b + k * N + n0;
        for (std::size_t j = 0; j < nn; ++j) cr[j] += av * br[j];
      }
    }
  }
}

// Column matrix rows have stride `ld`; sample columns start at `col`.
void im2col(const double* x, const ConvGeom& g, double* col, std::size_t ld) {
  for (int c = 0; c < g.cg; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        double* row = col + ((static_cast<std::size_t>(c) * g.kh + i) * g.kw + j) * ld;
        // Output columns whose input column lies inside the image.
        const int off = j - g.pad;
        const int lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
        const int hi = std::clamp((g.w - 1 - off) / g.stride + 1, lo, g.wo);
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + i;
          double* dst = row + static_cast<std::size_t>(oh) * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(ih) * g.w + off;
          std::fill(dst, dst + lo, 0.0);
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[ow] = src[ow * g.stride];
          }
          std::fill(dst + hi, dst + g.wo, 0.0);
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeom& g, double* x, std::size_t ld) {
  for (int c = 0; c < g.cg; ++c) {
    double* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const double* row = col + ((static_cast<std::size_t>(c) * g.kh + i) * g.kw + j) * ld;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + i;
          if (ih < 0 || ih >= g.h) continue;
          const double* src = row + static_cast<std::size_t>(oh) * g.wo;
          double* dst = xc + static_cast<std::size_t>(ih) * g.w;
          for (int ow = 0; ow < g.wo; ++ow) {
            const int iw = ow * g.stride - g.pad + j;
            if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution and linear
// ---------------------------------------------------------------------------

Var conv2d(const Var& input, const Var& weight, const Conv2dOptions& opts, const std::string& name) {
  Tape& tape = tape_of(input);
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4) {
    throw ShapeError(name + ": expected 4-D input and weight, got input " + shape_str(xs) + " weight " +
                     shape_str(ws));
  }
  if (opts.groups < 1 || opts.stride < 1 || opts.padding < 0) throw ShapeError(name + ": invalid conv options");
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[1], 0, ws[2], ws[3], opts.stride, opts.padding, opts.groups, 0, 0};
  if (g.c % g.groups != 0 || g.o % g.groups != 0) {
    throw ShapeError(name + ": channels " + std::to_string(g.c) + "->" + std::to_string(g.o) +
                     " not divisible by groups " + std::to_string(g.groups));
  }
  if (g.cg != g.c / g.groups) {
    throw ShapeError(name + ": weight expects " + std::to_string(g.cg * g.groups) + " input channels " +
                     shape_str(ws) + ", input has " + std::to_string(g.c) + " " + shape_str(xs));
  }
  g.og = g.o / g.groups;
  const int span_h = g.h + 2 * g.pad - g.kh;
  const int span_w = g.w + 2 * g.pad - g.kw;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError(name + ": kernel " + shape_str(ws) + " larger than padded input " + shape_str(xs));
  }
  g.ho = span_h / g.stride + 1;
  g.wo = span_w / g.stride + 1;

  const std::size_t K = g.k();
  const std::size_t P = g.p();
  const std::size_t NP = static_cast<std::size_t>(g.n) * P;
  const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
  Tensor out({g.n, g.o, g.ho, g.wo});
  // All samples of a group share one [K, N*P] column matrix. The matrices
  // are kept for the weight gradient when one is needed.
  const bool keep_cols = weight.needs_grad();
  auto cols = std::make_shared<std::vector<double>>(keep_cols ? K * NP * static_cast<std::size_t>(g.groups) : 0);
  std::vector<double> scratch(keep_cols ? 0 : K * NP);
  std::vector<double> acc(static_cast<std::size_t>(g.og) * NP);
  const double* x = input.value().data().data();
  const double* w = weight.value().data().data();
  double* y = out.data().data();
  for (int gi = 0; gi < g.groups; ++gi) {
    double* col = keep_cols ? cols->data() + static_cast<std::size_t>(gi) * K * NP : scratch.data();
    for (int n = 0; n < g.n; ++n) {
      im2col(x + (static_cast<std::size_t>(n) * g.c + static_cast<std::size_t>(gi) * g.cg) * in_plane, g,
             col + static_cast<std::size_t>(n) * P, NP);
    }
    std::fill(acc.begin(), acc.end(), 0.0);
    gemm_acc(static_cast<std::size_t>(g.og), K, NP, w + static_cast<std::size_t>(gi) * g.og * K, K, 1, col,
             acc.data());
    for (int o = 0; o < g.og; ++o) {
      const int oc = gi * g.og + o;
      for (int n = 0; n < g.n; ++n) {
        std::copy_n(acc.data() + static_cast<std::size_t>(o) * NP + static_cast<std::size_t>(n) * P, P,
                    y + (static_cast<std::size_t>(n) * g.o + oc) * P);
      }
    }
  }

  const std::size_t xid = input.id();
  const std::size_t wid = weight.id();
  return tape.record(std::move(out), {input, weight}, [g, xid, wid, cols](Tape& t, std::size_t self) {
    const std::size_t K = g.k();
    const std::size_t P = g.p();
    const std::size_t NP = static_cast<std::size_t>(g.n) * P;
    const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
    const bool want_x = t.needs_grad(xid);
    const bool want_w = t.needs_grad(wid);
    const double* w = t.value(wid).data().data();
    const double* gy = t.grad(self).data();
    double* gx = want_x ? t.grad(xid).data() : nullptr;
    double* gw = want_w ? t.grad(wid).data() : nullptr;
    std::vector<double> dcol(want_x ? K * NP : 0);
    std::vector<double> gyt(static_cast<std::size_t>(g.og) * NP);
    for (int gi = 0; gi < g.groups; ++gi) {
      // Output gradient of the group as [og, N*P].
      for (int o = 0; o < g.og; ++o) {
        const int oc = gi * g.og + o;
        for (int n = 0; n < g.n; ++n) {
          std::copy_n(gy + (static_cast<std::size_t>(n) * g.o + oc) * P, P,
                      gyt.data() + static_cast<std::size_t>(o) * NP + static_cast<std::size_t>(n) * P);
        }
      }
      if (want_w) {
        const double* col = cols->data() + static_cast<std::size_t>(gi) * K * NP;
        for (int o = 0; o < g.og; ++o) {
          double* gwrow = gw + static_cast<std::size_t>(gi * g.og + o) * K;
          const double* grow = gyt.data() + static_cast<std::size_t>(o) * NP;
          for (std::size_t k = 0; k < K; ++k) gwrow[k] += dot(grow, col + k * NP, NP);
        }
      }
      if (want_x) {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        // dcol[k][:] = sum_o w[o][k] * gyt[o][:]
        gemm_acc(K, static_cast<std::size_t>(g.og), NP, w + static_cast<std::size_t>(gi) * g.og * K, 1, K, gyt.data(),
                 dcol.data());
        for (int n = 0; n < g.n; ++n) {
          col2im(dcol.data() + static_cast<std::size_t>(n) * P, g,
                 gx + (static_cast<std::size_t>(n) * g.c + static_cast<std::size_t>(gi) * g.cg) * in_plane, NP);
        }
      }
    }
  });
}

Var bias_add(const Var& input, const Var& bias) {
  Tape& tape = tape_of(input);
  const Shape& xs = input.shape();
  if (xs.size() < 2 || bias.shape() != Shape{xs[1]}) {
    throw ShapeError("bias_add: bias " + shape_str(bias.shape()) + " does not match channels of " + shape_str(xs));
  }
  const int N = xs[0], C = xs[1];
  const std::size_t inner = inner_size(xs);
  Tensor out = input.value();
  const auto b = bias.value().data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double* row = out.data().data() + (static_cast<std::size_t>(n) * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) row[i] += b[static_cast<std::size_t>(c)];
    }
  const std::size_t xid = input.id(), bid = bias.id();
  return tape.record(std::move(out), {input, bias}, [N, C, inner, xid, bid](Tape& t, std::size_t self) {
    const auto gy = t.grad(self);
    if (t.needs_grad(xid)) {
      auto gx = t.grad(xid);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (t.needs_grad(bid)) {
      auto gb = t.grad(bid);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const double* row = gy.data() + (static_cast<std::size_t>(n) * C + c) * inner;
          double acc = 0.0;
          for (std::size_t i = 0; i < inner; ++i) acc += row[i];
          gb[static_cast<std::size_t>(c)] += acc;
        }
    }
  });
}

Var linear(const Var& input, const Var& weight, const Var& bias, const std::string& name) {
  Tape& tape = tape_of(input);
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) {
    throw ShapeError(name + ": input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
  }
  const int N = xs[0], D = xs[1], O = ws[0];
  if (bias.valid() && bias.shape() != Shape{O}) {
    throw ShapeError(name + ": bias " + shape_str(bias.shape()) + " expected [" + std::to_string(O) + "]");
  }
  Tensor out({N, O});
  const double* x = input.value().data().data();
  const double* w = weight.value().data().data();
  const double* b = bias.valid() ? bias.value().data().data() : nullptr;
  for (int n = 0; n < N; ++n) {
    const double* xr = x + static_cast<std::size_t>(n) * D;
    for (int o = 0; o < O; ++o) {
      const double* wr = w + static_cast<std::size_t>(o) * D;
      out[static_cast<std::size_t>(n) * O + o] = dot(xr, wr, static_cast<std::size_t>(D)) + (b ? b[o] : 0.0);
    }
  }
  const std::size_t xid = input.id(), wid = weight.id();
  const bool has_bias = bias.valid();
  const std::size_t bid = has_bias ? bias.id() : 0;
  return tape.record(std::move(out), {input, weight, bias}, [=](Tape& t, std::size_t self) {
    const double* gy = t.grad(self).data();
    const double* x = t.value(xid).data().data();
    const double* w = t.value(wid).data().data();
    if (t.needs_grad(xid)) {
      double* gx = t.grad(xid).data();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
          const double g = gy[static_cast<std::size_t>(n) * O + o];
          const double* wr = w + static_cast<std::size_t>(o) * D;
          double* gxr = gx + static_cast<std::size_t>(n) * D;
          for (int k = 0; k < D; ++k) gxr[k] += g * wr[k];
        }
    }
    if (t.needs_grad(wid)) {
      double* gw = t.grad(wid).data();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
          const double g = gy[static_cast<std::size_t>(n) * O + o];
          const double* xr = x + static_cast<std::size_t>(n) * D;
          double* gwr = gw + static_cast<std::size_t>(o) * D;
          for (int k = 0; k < D; ++k) gwr[k] += g * xr[k];
        }
    }
    if (has_bias && t.needs_grad(bid)) {
      double* gb = t.grad(bid).data();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) gb[o] += gy[static_cast<std::size_t>(n) * O + o];
    }
  });
}

// ---------------------------------------------------------------------------
// Activations, pooling, normalization
// ---------------------------------------------------------------------------

Var activation(const Var& input, ActivationKind kind) {
  Tape& tape = tape_of(input);
  Tensor out = input.value();
  for (double& v : out.data()) {
    if (kind == ActivationKind::Relu) {
      v = v > 0.0 ? v : 0.0;
    } else {
      // Branching keeps exp() from overflowing for large |v|.
      v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
  }
  const std::size_t xid = input.id();
  return tape.record(std::move(out), {input}, [kind, xid](Tape& t, std::size_t self) {
    const auto gy = t.grad(self);
    auto gx = t.grad(xid);
    const auto y = t.value(self).data();
    if (kind == ActivationKind::Relu) {
      const auto x = t.value(xid).data();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += x[i] > 0.0 ? gy[i] : 0.0;
    } else {
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
    }
  });
}

Var avgpool(const Var& input, int wh, int ww, int sh, int sw) {
  Tape& tape = tape_of(input);
  const Shape& xs = input.shape();
  if (xs.size() != 4) throw ShapeError("avgpool: expected 4-D input, got " + shape_str(xs));
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (wh < 1 || ww < 1 || sh < 1 || sw < 1 || wh > H || ww > W || (H - wh) % sh != 0 || (W - ww) % sw != 0) {
    throw ShapeError("avgpool: window " + std::to_string(wh) + "x" + std::to_string(ww) + " stride " +
                     std::to_string(sh) + "x" + std::to_string(sw) + " does not tile input " + shape_str(xs));
  }
  const int Ho = (H - wh) / sh + 1, Wo = (W - ww) / sw + 1;
  const double inv = 1.0 / (static_cast<double>(wh) * ww);
  Tensor out({N, C, Ho, Wo});
  const double* x = input.value().data().data();
  for (int nc = 0; nc < N * C; ++nc) {
    const double* plane = x + static_cast<std::size_t>(nc) * H * W;
    for (int oh = 0; oh < Ho; ++oh)
      for (int ow = 0; ow < Wo; ++ow) {
        double acc = 0.0;
        for (int i = 0; i < wh; ++i)
          for (int j = 0; j < ww; ++j) acc += plane[static_cast<std::size_t>(oh * sh + i) * W + ow * sw + j];
        out[(static_cast<std::size_t>(nc) * Ho + oh) * Wo + ow] = acc * inv;
      }
  }
  const std::size_t xid = input.id();
  return tape.record(std::move(out), {input}, [=](Tape& t, std::size_t self) {
    const double* gy = t.grad(self).data();
    double* gx = t.grad(xid).data();
    for (int nc = 0; nc < N * C; ++nc) {
      double* plane = gx + static_cast<std::size_t>(nc) * H * W;
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          const double g = gy[(static_cast<std::size_t>(nc) * Ho + oh) * Wo + ow] * inv;
          for (int i = 0; i < wh; ++i)
            for (int j = 0; j < ww; ++j) plane[static_cast<std::size_t>(oh * sh + i) * W + ow * sw + j] += g;
        }
    }
  });
}

Var global_avgpool(const Var& input) {
  const Shape& xs = input.shape();
  if (xs.size() != 4) throw ShapeError("global_avgpool: expected 4-D input, got " + shape_str(xs));
  return avgpool(input, xs[2], xs[3], 1, 1);
}

Var batchnorm(const Var& input, const Var& gamma, const Var& beta, RunningStats& stats, const BatchNormOptions& opts) {
  Tape& tape = tape_of(input);
  const Shape& xs = input.shape();
  if (xs.size() < 2) throw ShapeError("batchnorm: expected [N,C,...] input, got " + shape_str(xs));
  const int N = xs[0], C = xs[1];
  const Shape cs{C};
  if (gamma.shape() != cs || beta.shape() != cs || stats.mean.shape() != cs || stats.var.shape() != cs) {
    throw ShapeError("batchnorm: parameters " + shape_str(gamma.shape()) + " do not match channels of " +
                     shape_str(xs));
  }
  const std::size_t inner = inner_size(xs);
  const std::size_t M = static_cast<std::size_t>(N) * inner;
  const double* x = input.value().data().data();
  const auto gam = gamma.value().data();
  const auto bet = beta.value().data();
  Tensor out(xs);
  Tensor xhat(xs);
  std::vector<double> invstd(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    if (opts.mode == NormMode::Train) {
      for (int n = 0; n < N; ++n) {
        const double* row = x + (static_cast<std::size_t>(n) * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) mean += row[i];
      }
      mean /= static_cast<double>(M);
      for (int n = 0; n < N; ++n) {
        const double* row = x + (static_cast<std::size_t>(n) * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) var += (row[i] - mean) * (row[i] - mean);
      }
      const double unbiased = M > 1 ? var / static_cast<double>(M - 1) : var;
      var /= static_cast<double>(M);
      auto cu = static_cast<std::size_t>(c);
      stats.mean[cu] = (1.0 - opts.momentum) * stats.mean[cu] + opts.momentum * mean;
      stats.var[cu] = (1.0 - opts.momentum) * stats.var[cu] + opts.momentum * unbiased;
    } else {
      mean = stats.mean[static_cast<std::size_t>(c)];
      var = stats.var[static_cast<std::size_t>(c)];
    }
    const double is = 1.0 / std::sqrt(var + opts.eps);
    invstd[static_cast<std::size_t>(c)] = is;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double xh = (x[off + i] - mean) * is;
        xhat[off + i] = xh;
        out[off + i] = gam[static_cast<std::size_t>(c)] * xh + bet[static_cast<std::size_t>(c)];
      }
    }
  }
  const std::size_t xid = input.id(), gid = gamma.id(), bid = beta.id();
  const bool train = opts.mode == NormMode::Train;
  return tape.record(std::move(out), {input, gamma, beta},
                     [=, xhat = std::move(xhat), invstd = std::move(invstd)](Tape& t, std::size_t self) {
                       const double* gy = t.grad(self).data();
                       const auto gam = t.value(gid).data();
                       std::vector<double> dgamma(static_cast<std::size_t>(C), 0.0);
                       std::vector<double> dbeta(static_cast<std::size_t>(C), 0.0);
                       for (int n = 0; n < N; ++n)
                         for (int c = 0; c < C; ++c) {
                           const std::size_t off = (static_cast<std::size_t>(n) * C + c) * inner;
                           for (std::size_t i = 0; i < inner; ++i) {
                             dgamma[static_cast<std::size_t>(c)] += gy[off + i] * xhat[off + i];
                             dbeta[static_cast<std::size_t>(c)] += gy[off + i];
                           }
                         }
                       if (t.needs_grad(xid)) {
                         double* gx = t.grad(xid).data();
                         const double m = static_cast<double>(M);
                         for (int c = 0; c < C; ++c) {
                           const auto cu = static_cast<std::size_t>(c);
                           const double k = gam[cu] * invstd[cu];
                           for (int n = 0; n < N; ++n) {
                             const std::size_t off = (static_cast<std::size_t>(n) * C + c) * inner;
                             for (std::size_t i = 0; i < inner; ++i) {
                               if (train) {
                                 gx[off + i] += k / m * (m * gy[off + i] - dbeta[cu] - xhat[off + i] * dgamma[cu]);
                               } else {
                                 gx[off + i] += k * gy[off + i];
                               }
                             }
                           }
                         }
                       }
                       if (t.needs_grad(gid)) {
                         auto gg = t.grad(gid);
                         for (int c = 0; c < C; ++c) gg[static_cast<std::size_t>(c)] += dgamma[static_cast<std::size_t>(c)];
                       }
                       if (t.needs_grad(bid)) {
                         auto gb = t.grad(bid);
                         for (int c = 0; c < C; ++c) gb[static_cast<std::size_t>(c)] += dbeta[static_cast<std::size_t>(c)];
                       }
                     });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  Tape& tape = tape_of(logits);
  const Shape& ls = logits.shape();
  if (ls.size() != 2) throw ShapeError("softmax_cross_entropy: expected [N,K] logits, got " + shape_str(ls));
  const int N = ls[0], K = ls[1];
  if (static_cast<int>(labels.size()) != N) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(N));
  }
  const double* z = logits.value().data().data();
  std::vector<double> probs(static_cast<std::size_t>(N) * K);
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= K) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(K) + ")");
    }
    const double* row = z + static_cast<std::size_t>(n) * K;
    const double mx = *std::max_element(row, row + K);
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += std::exp(row[k] - mx);
    const double lse = mx + std::log(s);
    for (int k = 0; k < K; ++k) probs[static_cast<std::size_t>(n) * K + k] = std::exp(row[k] - lse);
    total += lse - row[y];
  }
  Tensor out({1}, total / N);
  std::vector<int> lab(labels.begin(), labels.end());
  const std::size_t zid = logits.id();
  return tape.record(std::move(out), {logits},
                     [=, probs = std::move(probs), lab = std::move(lab)](Tape& t, std::size_t self) {
                       const double g = t.grad(self)[0] / N;
                       auto gz = t.grad(zid);
                       for (int n = 0; n < N; ++n)
                         for (int k = 0; k < K; ++k) {
                           const std::size_t i = static_cast<std::size_t>(n) * K + k;
                           gz[i] += g * (probs[i] - (k == lab[static_cast<std::size_t>(n)] ? 1.0 : 0.0));
                         }
                     });
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [aid, bid](Tape& t, std::size_t self) {
    const auto gy = t.grad(self);
    for (std::size_t id : {aid, bid}) {
      if (!t.needs_grad(id)) continue;
      auto g = t.grad(id);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [aid, bid](Tape& t, std::size_t self) {
    const auto gy = t.grad(self);
    if (t.needs_grad(aid)) {
      auto g = t.grad(aid);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
    }
    if (t.needs_grad(bid)) {
      auto g = t.grad(bid);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [aid, bid](Tape& t, std::size_t self) {
    const auto gy = t.grad(self);
    if (t.needs_grad(aid)) {
      const auto bv = t.value(bid).data();
      auto g = t.grad(aid);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * bv[i];
    }
    if (t.needs_grad(bid)) {
      const auto av = t.value(aid).data();
      auto g = t.grad(bid);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * av[i];
    }
  });
}

Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  const std::size_t aid = a.id();
  return tape_of(a).record(std::move(out), {a}, [aid, c](Tape& t, std::size_t self) {
    const auto gy = t.grad(self);
    auto g = t.grad(aid);
    for (std::size_t i = 0; i < gy.size(); ++i) g[i] += c * gy[i];
  });
}

Var add_scalar(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v += c;
  const std::size_t aid = a.id();
  return tape_of(a).record(std::move(out), {a}, [aid](Tape& t, std::size_t self) {
    const auto gy = t.grad(self);
    auto g = t.grad(aid);
    for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
  });
}

Var one_minus(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = 1.0 - v;
  const std::size_t aid = a.id();
  return tape_of(a).record(std::move(out), {a}, [aid](Tape& t, std::size_t self) {
    const auto gy = t.grad(self);
    auto g = t.grad(aid);
    for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i];
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t aid = a.id();
  return tape_of(a).record(Tensor({1}, s), {a}, [aid](Tape& t, std::size_t self) {
    const double gy = t.grad(self)[0];
    for (double& g : t.grad(aid)) g += gy;
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t aid = a.id();
  return tape_of(a).record(std::move(out), {a}, [aid](Tape& t, std::size_t self) {
    const auto gy = t.grad(self);
    auto g = t.grad(aid);
    for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
  });
}

Var channel_scale(const Var& input, const Var& gates) {
  const Shape& xs = input.shape();
  if (xs.size() < 2 || gates.shape() != Shape{xs[1]}) {
    throw ShapeError("channel_scale: gate length " + shape_str(gates.shape()) + " does not match channels of " +
                     shape_str(xs));
  }
  const int N = xs[0], C = xs[1];
  const std::size_t inner = inner_size(xs);
  Tensor out = input.value();
  const auto g = gates.value().data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double* row = out.data().data() + (static_cast<std::size_t>(n) * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) row[i] *= g[static_cast<std::size_t>(c)];
    }
  const std::size_t xid = input.id(), gid = gates.id();
  return tape_of(input).record(std::move(out), {input, gates}, [=](Tape& t, std::size_t self) {
    const double* gy = t.grad(self).data();
    if (t.needs_grad(xid)) {
      const auto gv = t.value(gid).data();
      double* gx = t.grad(xid).data();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const std::size_t off = (static_cast<std::size_t>(n) * C + c) * inner;
          for (std::size_t i = 0; i < inner; ++i) gx[off + i] += gy[off + i] * gv[static_cast<std::size_t>(c)];
        }
    }
    if (t.needs_grad(gid)) {
      const double* x = t.value(xid).data().data();
      auto gg = t.grad(gid);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const std::size_t off = (static_cast<std::size_t>(n) * C + c) * inner;
          double acc = 0.0;
          for (std::size_t i = 0; i < inner; ++i) acc += gy[off + i] * x[off + i];
          gg[static_cast<std::size_t>(c)] += acc;
        }
    }
  });
}

}  // namespace dagger
