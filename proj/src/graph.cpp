// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include "dagger/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <sstream>

#include "dagger/error.hpp"
#include "dagger/kvconfig.hpp"
#include "dagger/rng.hpp"

namespace dagger {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::DepthwiseConv: return "depthwise_conv";
    case LayerKind::Linear: return "linear";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Activation: return "activation";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::Add: return "add";
  }
  return "?";
}

LayerKind layer_kind_from_string(std::string_view s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "depthwise_conv") return LayerKind::DepthwiseConv;
  if (s == "linear") return LayerKind::Linear;
  if (s == "batchnorm") return LayerKind::BatchNorm;
  if (s == "activation" || s == "relu" || s == "sigmoid") return LayerKind::Activation;
  if (s == "avgpool") return LayerKind::AvgPool;
  if (s == "add") return LayerKind::Add;
  throw ConfigError("unknown layer kind '" + std::string(s) + "'");
}

std::string_view to_string(GateStatus s) {
  switch (s) {
    case GateStatus::Active: return "active";
    case GateStatus::Pruned: return "pruned";
    case GateStatus::Retained: return "retained";
  }
  return "?";
}

int GateVector::count(GateStatus s) const {
  return static_cast<int>(std::count(status.begin(), status.end(), s));
}

void GateVector::prune(int filter) {
  values.at(static_cast<std::size_t>(filter)) = 0.0;
  status.at(static_cast<std::size_t>(filter)) = GateStatus::Pruned;
}

void GateVector::retain(int filter) {
  values.at(static_cast<std::size_t>(filter)) = 1.0;
  status.at(static_cast<std::size_t>(filter)) = GateStatus::Retained;
}

// ---------------------------------------------------------------------------
// Config text format
// ---------------------------------------------------------------------------

namespace {

Shape parse_extent(const std::string& s, const std::string& what) {
  Shape out;
  for (const auto& part : kv_split(s, 'x')) out.push_back(kv_to_int(part, what));
  return out;
}

void parse_kernel(const std::string& s, LayerSpec& spec) {
  const Shape k = parse_extent(s, spec.id + ".kernel");
  if (k.size() == 1) {
    spec.kernel_h = spec.kernel_w = k[0];
  } else if (k.size() == 2) {
    spec.kernel_h = k[0];
    spec.kernel_w = k[1];
  } else {
    throw ConfigError(spec.id + ".kernel: expected K or KHxKW, got '" + s + "'");
  }
}

}  // namespace

NetworkConfig parse_network_config(std::string_view text) {
  const auto sections = parse_kv(text);
  NetworkConfig cfg;
  const KvSection& top = sections.front();
  for (const auto& [key, value] : top.entries) {
    if (key == "input") {
      cfg.input_shape = parse_extent(value, "input");
    } else if (key == "gate_classifier") {
      cfg.gate_classifier = kv_to_bool(value, "gate_classifier");
    } else {
      throw ConfigError("unknown top-level key '" + key + "'");
    }
  }
  if (cfg.input_shape.size() != 3) throw ConfigError("input must be CxHxW");
  for (std::size_t i = 1; i < sections.size(); ++i) {
    const KvSection& sec = sections[i];
    LayerSpec spec;
    spec.id = sec.name;
    const auto kind = sec.get("kind");
    if (!kind) throw ConfigError("layer '" + spec.id + "' (line " + std::to_string(sec.line) + "): missing kind");
    spec.kind = layer_kind_from_string(*kind);
    if (*kind == "sigmoid") spec.activation = ActivationKind::Sigmoid;
    bool stride_given = false;
    for (const auto& [key, value] : sec.entries) {
      const std::string what = spec.id + "." + key;
      if (key == "kind") continue;
      if (key == "filters") {
        spec.filters = kv_to_int(value, what);
      } else if (key == "kernel" || key == "window") {
        parse_kernel(value, spec);
      } else if (key == "stride") {
        spec.stride = kv_to_int(value, what);
        stride_given = true;
      } else if (key == "padding") {
        spec.padding = kv_to_int(value, what);
      } else if (key == "inputs") {
        spec.inputs = kv_split(value, ',');
      } else if (key == "gated") {
        spec.gated = kv_to_bool(value, what);
      } else if (key == "bias") {
        spec.bias = kv_to_bool(value, what);
      } else if (key == "function") {
        if (value == "relu") {
          spec.activation = ActivationKind::Relu;
        } else if (value == "sigmoid") {
          spec.activation = ActivationKind::Sigmoid;
        } else {
          throw ConfigError(what + ": unknown activation '" + value + "'");
        }
      } else if (key == "global") {
        spec.global = kv_to_bool(value, what);
      } else {
        throw ConfigError("layer '" + spec.id + "': unknown key '" + key + "'");
      }
    }
    if (spec.kind == LayerKind::AvgPool && !stride_given) spec.stride = spec.kernel_h;
    cfg.layers.push_back(std::move(spec));
  }
  if (cfg.layers.empty()) throw ConfigError("network has no layers");
  return cfg;
}

NetworkConfig load_network_config(const std::string& path) { return parse_network_config(read_text_file(path)); }

std::string format_network_config(const NetworkConfig& cfg) {
  std::ostringstream os;
  os << "input = " << cfg.input_shape.at(0) << 'x' << cfg.input_shape.at(1) << 'x' << cfg.input_shape.at(2) << '\n';
  os << "gate_classifier = " << (cfg.gate_classifier ? "true" : "false") << '\n';
  for (const LayerSpec& l : cfg.layers) {
    os << "\n[" << l.id << "]\n";
    os << "kind = " << to_string(l.kind) << '\n';
    if (!l.inputs.empty()) {
      os << "inputs = ";
      for (std::size_t i = 0; i < l.inputs.size(); ++i) os << (i ? ", " : "") << l.inputs[i];
      os << '\n';
    }
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::DepthwiseConv:
        if (l.filters > 0) os << "filters = " << l.filters << '\n';
        os << "kernel = " << l.kernel_h << 'x' << l.kernel_w << '\n';
        os << "stride = " << l.stride << '\n';
        os << "padding = " << l.padding << '\n';
        os << "bias = " << (l.bias ? "true" : "false") << '\n';
        if (l.gated) os << "gated = " << (*l.gated ? "true" : "false") << '\n';
        break;
      case LayerKind::Linear:
        os << "filters = " << l.filters << '\n';
        os << "bias = " << (l.bias ? "true" : "false") << '\n';
        if (l.gated) os << "gated = " << (*l.gated ? "true" : "false") << '\n';
        break;
      case LayerKind::Activation:
        os << "function = " << (l.activation == ActivationKind::Relu ? "relu" : "sigmoid") << '\n';
        break;
      case LayerKind::AvgPool:
        if (l.global) {
          os << "global = true\n";
        } else {
          os << "window = " << l.kernel_h << 'x' << l.kernel_w << '\n';
          os << "stride = " << l.stride << '\n';
        }
        break;
      case LayerKind::BatchNorm:
      case LayerKind::Add:
        break;
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// NetworkGraph
// ---------------------------------------------------------------------------

int NetworkGraph::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].spec.id == id) return static_cast<int>(i);
  throw ConfigError("no layer named '" + std::string(id) + "'");
}

GateValues NetworkGraph::gate_values() const {
  GateValues v;
  v.reserve(gates_.size());
  for (const GateVector& g : gates_) v.push_back(g.values);
  return v;
}

std::vector<Parameter*> NetworkGraph::parameters() {
  std::vector<Parameter*> out;
  for (LayerWeights& w : weights_)
    for (Parameter* p : {&w.weight, &w.bias, &w.gamma, &w.beta})
      if (!p->empty()) out.push_back(p);
  return out;
}

std::size_t NetworkGraph::parameter_count() const {
  std::size_t n = 0;
  for (const LayerWeights& w : weights_)
    for (const Parameter* p : {&w.weight, &w.bias, &w.gamma, &w.beta}) n += p->value.numel();
  return n;
}

std::uint64_t NetworkGraph::weights_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const Tensor& t) {
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
    h ^= t.numel();
    h *= 0x100000001b3ULL;
  };
  for (const LayerWeights& w : weights_) {
    mix(w.weight.value);
    mix(w.bias.value);
    mix(w.gamma.value);
    mix(w.beta.value);
    mix(w.stats.mean);
    mix(w.stats.var);
  }
  return h;
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  int make() {
    parent.push_back(static_cast<int>(parent.size()));
    return parent.back();
  }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }
};

int conv_out(int in, int k, int pad, int stride) {
  const int span = in + 2 * pad - k;
  if (span < 0) return 0;
  return span / stride + 1;
}

}  // namespace

NetworkGraph build_graph(const NetworkConfig& config, std::uint64_t seed) {
  if (config.input_shape.size() != 3 || std::any_of(config.input_shape.begin(), config.input_shape.end(),
                                                    [](int d) { return d <= 0; })) {
    throw ConfigError("input shape must be CxHxW with positive extents, got " + shape_str(config.input_shape));
  }
  if (config.layers.empty()) throw ConfigError("network has no layers");

  NetworkGraph g;
  g.config_ = config;
  const std::size_t L = config.layers.size();
  std::map<std::string, int> ids;
  for (std::size_t i = 0; i < L; ++i) {
    const std::string& id = config.layers[i].id;
    if (id.empty() || id == "input") throw ConfigError("invalid layer id '" + id + "'");
    if (!ids.emplace(id, static_cast<int>(i)).second) throw ConfigError("duplicate layer id '" + id + "'");
  }

  UnionFind uf;
  std::vector<int> raw_group(L, -1);
  std::vector<bool> raw_fixed;
  const int input_group = uf.make();
  raw_fixed.push_back(true);
  std::vector<int> consumers(L, 0);

  for (std::size_t i = 0; i < L; ++i) {
    const LayerSpec& spec = config.layers[i];
    LayerInfo info;
    info.spec = spec;
    std::vector<std::string> in_ids = spec.inputs;
    if (in_ids.empty()) in_ids.push_back(i == 0 ? "input" : config.layers[i - 1].id);
    for (const std::string& in : in_ids) {
      if (in == "input") {
        info.inputs.push_back(-1);
        continue;
      }
      const auto it = ids.find(in);
      if (it == ids.end()) throw ConfigError("layer '" + spec.id + "': unknown input '" + in + "'");
      if (it->second >= static_cast<int>(i)) {
        throw ConfigError("layer '" + spec.id + "': input '" + in + "' creates a cycle (layers must be listed in order)");
      }
      info.inputs.push_back(it->second);
      ++consumers[static_cast<std::size_t>(it->second)];
    }
    info.spec.inputs = in_ids;
    auto shape_of = [&](int idx) -> const Shape& {
      return idx < 0 ? config.input_shape : g.layers_[static_cast<std::size_t>(idx)].out_shape;
    };
    auto group_of = [&](int idx) { return idx < 0 ? input_group : raw_group[static_cast<std::size_t>(idx)]; };

    const bool is_output = i + 1 == L;
    if (spec.kind != LayerKind::Add && info.inputs.size() != 1) {
      throw ConfigError("layer '" + spec.id + "': expected exactly one input");
    }
    info.in_shape = shape_of(info.inputs.front());
    const Shape& in = info.in_shape;
    const std::string where = "layer '" + spec.id + "'";
    switch (spec.kind) {
      case LayerKind::Conv:
      case LayerKind::DepthwiseConv: {
        if (in.size() != 3) throw ConfigError(where + ": convolution needs a CxHxW input, got " + shape_str(in));
        if (spec.kernel_h < 1 || spec.kernel_w < 1 || spec.stride < 1 || spec.padding < 0) {
          throw ConfigError(where + ": invalid kernel/stride/padding");
        }
        int filters = spec.filters;
        if (spec.kind == LayerKind::DepthwiseConv) {
          if (filters != 0 && filters != in[0]) {
            throw ConfigError(where + ": depthwise filters " + std::to_string(filters) + " must equal input channels " +
                              std::to_string(in[0]));
          }
          filters = in[0];
        }
        if (filters < 1) throw ConfigError(where + ": filters must be >= 1");
        const int ho = conv_out(in[1], spec.kernel_h, spec.padding, spec.stride);
        const int wo = conv_out(in[2], spec.kernel_w, spec.padding, spec.stride);
        if (ho < 1 || wo < 1) throw ConfigError(where + ": kernel larger than padded input " + shape_str(in));
        info.out_shape = {filters, ho, wo};
        info.spec.filters = filters;
        break;
      }
      case LayerKind::Linear:
        if (spec.filters < 1) throw ConfigError(where + ": filters must be >= 1");
        info.out_shape = {spec.filters};
        break;
      case LayerKind::BatchNorm:
      case LayerKind::Activation:
        info.out_shape = in;
        break;
      case LayerKind::AvgPool: {
        if (in.size() != 3) throw ConfigError(where + ": avgpool needs a CxHxW input, got " + shape_str(in));
        if (spec.global) {
          info.out_shape = {in[0], 1, 1};
          break;
        }
        const int wh = spec.kernel_h, ww = spec.kernel_w, s = spec.stride;
        if (wh < 1 || ww < 1 || s < 1 || wh > in[1] || ww > in[2] || (in[1] - wh) % s != 0 || (in[2] - ww) % s != 0) {
          throw ConfigError(where + ": pooling window does not tile input " + shape_str(in));
        }
        info.out_shape = {in[0], (in[1] - wh) / s + 1, (in[2] - ww) / s + 1};
        break;
      }
      case LayerKind::Add: {
        if (info.inputs.size() != 2) throw ConfigError(where + ": add needs exactly two inputs");
        const Shape& a = shape_of(info.inputs[0]);
        const Shape& b = shape_of(info.inputs[1]);
        if (a != b) {
          throw ConfigError(where + ": add inputs have mismatched filter counts/shapes " + shape_str(a) + " vs " +
                            shape_str(b));
        }
        info.out_shape = a;
        break;
      }
    }
    if (spec.kind != LayerKind::Conv && spec.kind != LayerKind::Linear && spec.kind != LayerKind::DepthwiseConv) {
      info.spec.filters = info.out_shape.front();
    }

    // Channel grouping.
    const bool gateable =
        spec.kind == LayerKind::Conv || spec.kind == LayerKind::Linear || spec.kind == LayerKind::DepthwiseConv;
    const bool gated = gateable && spec.gated.value_or(is_output ? config.gate_classifier : true);
    if (spec.kind != LayerKind::Add) info.in_group = group_of(info.inputs.front());
    switch (spec.kind) {
      case LayerKind::Conv:
      case LayerKind::Linear:
        raw_group[i] = uf.make();
        raw_fixed.push_back(!gated);
        break;
      case LayerKind::DepthwiseConv:
        raw_group[i] = group_of(info.inputs.front());
        if (!gated) raw_fixed[static_cast<std::size_t>(uf.find(raw_group[i]))] = true;
        break;
      case LayerKind::Add:
        uf.unite(group_of(info.inputs[0]), group_of(info.inputs[1]));
        raw_group[i] = group_of(info.inputs[0]);
        break;
      default:
        raw_group[i] = group_of(info.inputs.front());
        break;
    }
    if (gated) {
      info.gate_index = static_cast<int>(g.gated_layers_.size());
      g.gated_layers_.push_back(static_cast<int>(i));
    }
    g.layers_.push_back(std::move(info));
  }

  for (std::size_t i = 0; i + 1 < L; ++i) {
    if (consumers[i] == 0) {
      throw ConfigError("layer '" + config.layers[i].id + "' is never consumed; the graph must have a single output");
    }
  }
  if (g.layers_.back().out_shape.size() != 1) {
    throw ConfigError("output layer '" + config.layers.back().id + "' must produce a flat [classes] vector");
  }

  // Compact groups; merged fixed flags propagate to the root.
  std::vector<bool> root_fixed(raw_fixed.size(), false);
  for (std::size_t r = 0; r < raw_fixed.size(); ++r)
    if (raw_fixed[r]) root_fixed[static_cast<std::size_t>(uf.find(static_cast<int>(r)))] = true;
  std::map<int, int> compact;
  auto compact_id = [&](int raw) {
    const int root = uf.find(raw);
    auto [it, inserted] = compact.emplace(root, static_cast<int>(g.groups_.size()));
    if (inserted) {
      ChannelGroup grp;
      grp.fixed = root_fixed[static_cast<std::size_t>(root)];
      g.groups_.push_back(grp);
    }
    return it->second;
  };
  for (std::size_t i = 0; i < L; ++i) {
    LayerInfo& info = g.layers_[i];
    info.group = compact_id(raw_group[i]);
    if (info.in_group >= 0) info.in_group = compact_id(info.in_group);
    ChannelGroup& grp = g.groups_[static_cast<std::size_t>(info.group)];
    grp.channels = info.out_channels();
    if (info.is_gated()) grp.members.push_back(static_cast<int>(i));
  }
  for (std::size_t i = 0; i < L; ++i) {
    LayerInfo& info = g.layers_[i];
    if (info.in_group >= 0) g.groups_[static_cast<std::size_t>(info.in_group)].channels = info.in_channels();
  }

  // Gate sites: a batchnorm that is the sole consumer of a gated layer.
  for (std::size_t i = 0; i < L; ++i) {
    LayerInfo& info = g.layers_[i];
    if (!info.is_gated()) continue;
    info.gate_site = static_cast<int>(i);
    if (consumers[i] == 1) {
      for (std::size_t j = i + 1; j < L; ++j) {
        const LayerInfo& c = g.layers_[j];
        if (std::find(c.inputs.begin(), c.inputs.end(), static_cast<int>(i)) == c.inputs.end()) continue;
        if (c.spec.kind == LayerKind::BatchNorm) info.gate_site = static_cast<int>(j);
        break;
      }
    }
  }

  // A removed channel must read as zero downstream, so prunable channels may
  // only pass through layers that map zero to zero.
  std::vector<bool> is_site(L, false);
  for (const LayerInfo& info : g.layers_)
    if (info.is_gated()) is_site[static_cast<std::size_t>(info.gate_site)] = true;
  for (std::size_t i = 0; i < L; ++i) {
    const LayerInfo& info = g.layers_[i];
    if (g.groups_[static_cast<std::size_t>(info.group)].fixed) continue;
    const bool sigmoid = info.spec.kind == LayerKind::Activation && info.spec.activation == ActivationKind::Sigmoid;
    const bool loose_bn = info.spec.kind == LayerKind::BatchNorm && !is_site[i];
    if (sigmoid || loose_bn) {
      throw ConfigError("layer '" + info.spec.id + "': " + (sigmoid ? "sigmoid" : "batchnorm") +
                        " on prunable channels would not map pruned channels to zero");
    }
  }

  // Weights.
  Rng rng(seed);
  g.weights_.resize(L);
  for (std::size_t i = 0; i < L; ++i) {
    const LayerInfo& info = g.layers_[i];
    LayerWeights& w = g.weights_[i];
    Rng layer_rng = rng.split();
    const int out = info.out_channels();
    switch (info.spec.kind) {
      case LayerKind::Conv: {
        const int fan_in = info.in_channels() * info.spec.kernel_h * info.spec.kernel_w;
        w.weight = Parameter(Tensor::randn({out, info.in_channels(), info.spec.kernel_h, info.spec.kernel_w}, layer_rng,
                                           std::sqrt(2.0 / fan_in)));
        if (info.spec.bias) w.bias = Parameter(Tensor::zeros({out}));
        break;
      }
      case LayerKind::DepthwiseConv: {
        const int fan_in = info.spec.kernel_h * info.spec.kernel_w;
        w.weight = Parameter(
            Tensor::randn({out, 1, info.spec.kernel_h, info.spec.kernel_w}, layer_rng, std::sqrt(2.0 / fan_in)));
        if (info.spec.bias) w.bias = Parameter(Tensor::zeros({out}));
        break;
      }
      case LayerKind::Linear: {
        const auto fan_in = static_cast<int>(shape_numel(info.in_shape));
        w.weight = Parameter(Tensor::randn({out, fan_in}, layer_rng, std::sqrt(2.0 / fan_in)));
        if (info.spec.bias) w.bias = Parameter(Tensor::zeros({out}));
        break;
      }
      case LayerKind::BatchNorm:
        w.gamma = Parameter(Tensor::ones({out}));
        w.beta = Parameter(Tensor::zeros({out}));
        w.stats.mean = Tensor::zeros({out});
        w.stats.var = Tensor::ones({out});
        break;
      default:
        break;
    }
  }

  for (int li : g.gated_layers_) {
    const LayerInfo& info = g.layers_[static_cast<std::size_t>(li)];
    GateVector gv;
    gv.layer_id = info.spec.id;
    gv.values.assign(static_cast<std::size_t>(info.out_channels()), 1.0);
    gv.status.assign(static_cast<std::size_t>(info.out_channels()), GateStatus::Active);
    g.gates_.push_back(std::move(gv));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

Var forward(Tape& tape, NetworkGraph& graph, const Var& batch, const ForwardOptions& opts) {
  const Shape& bs = batch.shape();
  const Shape& in = graph.input_shape();
  if (bs.size() != 4 || bs[1] != in[0] || bs[2] != in[1] || bs[3] != in[2]) {
    throw ShapeError("forward: batch " + shape_str(bs) + " does not match input shape " + shape_str(in));
  }
  if (!opts.live_gates.empty() && opts.live_gates.size() != graph.gates().size()) {
    throw ShapeError("forward: " + std::to_string(opts.live_gates.size()) + " live gate vectors for " +
                     std::to_string(graph.gates().size()) + " gated layers");
  }
  const auto layers = graph.layers();
  std::vector<int> site_gate(layers.size(), -1);
  for (const LayerInfo& info : layers)
    if (info.is_gated()) site_gate[static_cast<std::size_t>(info.gate_site)] = info.gate_index;

  auto param = [&](Parameter& p) { return opts.train_weights ? tape.leaf(p.value) : tape.view(p.value); };

  std::vector<Var> out(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerInfo& info = layers[i];
    LayerWeights& w = graph.weights(static_cast<int>(i));
    auto input_var = [&](std::size_t k) {
      const int idx = info.inputs[k];
      return idx < 0 ? batch : out[static_cast<std::size_t>(idx)];
    };
    const Var x = input_var(0);
    Var y;
    switch (info.spec.kind) {
      case LayerKind::Conv:
      case LayerKind::DepthwiseConv: {
        Conv2dOptions co{info.spec.stride, info.spec.padding,
                         info.spec.kind == LayerKind::DepthwiseConv ? info.in_channels() : 1};
        y = conv2d(x, param(w.weight), co, info.spec.id);
        if (!w.bias.empty()) y = bias_add(y, param(w.bias));
        break;
      }
      case LayerKind::Linear: {
        Var flat = x;
        if (x.shape().size() != 2) flat = reshape(x, {x.shape()[0], static_cast<int>(shape_numel(info.in_shape))});
        y = linear(flat, param(w.weight), w.bias.empty() ? Var{} : param(w.bias), info.spec.id);
        break;
      }
      case LayerKind::BatchNorm: {
        BatchNormOptions bo;
        bo.mode = opts.mode;
        y = batchnorm(x, param(w.gamma), param(w.beta), w.stats, bo);
        break;
      }
      case LayerKind::Activation:
        y = activation(x, info.spec.activation);
        break;
      case LayerKind::AvgPool:
        y = info.spec.global ? global_avgpool(x)
                             : avgpool(x, info.spec.kernel_h, info.spec.kernel_w, info.spec.stride, info.spec.stride);
        break;
      case LayerKind::Add:
        y = add(x, input_var(1));
        break;
    }
    const int gi = site_gate[i];
    if (gi >= 0 && !opts.ungated) {
      Var gate;
      if (!opts.live_gates.empty()) {
        gate = opts.live_gates[static_cast<std::size_t>(gi)];
      } else {
        const GateVector& gv = graph.gates()[static_cast<std::size_t>(gi)];
        gate = tape.constant(Tensor({static_cast<int>(gv.size())}, gv.values));
      }
      y = channel_scale(y, gate);
    }
    out[i] = y;
  }
  if (opts.trace) *opts.trace = out;
  return out.back();
}

Tensor gated_forward(NetworkGraph& graph, const Tensor& batch) {
  Tape tape;
  const Var x = tape.view(batch);
  return forward(tape, graph, x, ForwardOptions{}).value();
}

// ---------------------------------------------------------------------------
// Materialization
// ---------------------------------------------------------------------------

std::vector<std::vector<bool>> group_keep_masks(const NetworkGraph& graph, const GateValues& gates) {
  std::vector<std::vector<bool>> keep;
  for (const ChannelGroup& grp : graph.groups()) {
    std::vector<bool> k(static_cast<std::size_t>(grp.channels), grp.fixed);
    if (!grp.fixed) {
      for (int member : grp.members) {
        const auto& v = gates.at(static_cast<std::size_t>(graph.layer(member).gate_index));
        for (std::size_t c = 0; c < k.size(); ++c)
          if (v.at(c) != 0.0) k[c] = true;
      }
    }
    keep.push_back(std::move(k));
  }
  return keep;
}

namespace {

std::vector<int> kept_indices(const std::vector<bool>& mask) {
  std::vector<int> idx;
  for (std::size_t c = 0; c < mask.size(); ++c)
    if (mask[c]) idx.push_back(static_cast<int>(c));
  return idx;
}

Tensor select_rows(const Tensor& t, const std::vector<int>& rows) {
  const std::size_t row_len = t.numel() / static_cast<std::size_t>(t.dim(0));
  Shape s = t.shape();
  s[0] = static_cast<int>(rows.size());
  Tensor out(s);
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(rows[r]) * row_len), row_len,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * row_len));
  return out;
}

// Keeps rows `rows` and, within each row, column blocks `cols` of size `block`.
Tensor select_rows_cols(const Tensor& t, const std::vector<int>& rows, const std::vector<int>& cols, std::size_t block,
                        Shape shape) {
  const std::size_t row_len = t.numel() / static_cast<std::size_t>(t.dim(0));
  Tensor out(std::move(shape));
  std::size_t o = 0;
  for (int r : rows)
    for (int c : cols)
      for (std::size_t b = 0; b < block; ++b)
        out[o++] = t[static_cast<std::size_t>(r) * row_len + static_cast<std::size_t>(c) * block + b];
  return out;
}

}  // namespace

NetworkGraph materialize_pruned(const NetworkGraph& graph) {
  for (const GateVector& gv : graph.gates()) {
    if (gv.count(GateStatus::Active) > 0) {
      throw Error("materialize_pruned: layer '" + gv.layer_id + "' still has active gates");
    }
    if (gv.count(GateStatus::Retained) == 0) {
      throw Error("materialize_pruned: layer '" + gv.layer_id + "' would have zero filters");
    }
  }
  GateValues binary;
  for (const GateVector& gv : graph.gates()) {
    std::vector<double> v(gv.size());
    for (std::size_t c = 0; c < v.size(); ++c) v[c] = gv.status[c] == GateStatus::Retained ? 1.0 : 0.0;
    binary.push_back(std::move(v));
  }
  const auto masks = group_keep_masks(graph, binary);
  std::vector<std::vector<int>> keep;
  for (const auto& m : masks) keep.push_back(kept_indices(m));
  // The logits keep their full width; pruned classifier rows are zeroed below.
  auto& out_keep = keep[static_cast<std::size_t>(graph.layers().back().group)];
  out_keep.resize(static_cast<std::size_t>(graph.num_classes()));
  std::iota(out_keep.begin(), out_keep.end(), 0);

  NetworkConfig cfg = graph.config();
  const auto layers = graph.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    LayerSpec& spec = cfg.layers[i];
    spec.inputs = layers[i].spec.inputs;
    if (spec.kind == LayerKind::Conv || spec.kind == LayerKind::Linear || spec.kind == LayerKind::DepthwiseConv) {
      spec.filters = static_cast<int>(keep[static_cast<std::size_t>(layers[i].group)].size());
      spec.gated = layers[i].is_gated();
    }
  }
  NetworkGraph out = build_graph(cfg, 0);

  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerInfo& info = layers[i];
    const LayerWeights& src = graph.weights(static_cast<int>(i));
    LayerWeights& dst = out.weights_[i];
    const auto& ko = keep[static_cast<std::size_t>(info.group)];
    switch (info.spec.kind) {
      case LayerKind::Conv: {
        const auto& ki = keep[static_cast<std::size_t>(info.in_group)];
        const std::size_t block = static_cast<std::size_t>(info.spec.kernel_h) * info.spec.kernel_w;
        dst.weight = Parameter(select_rows_cols(src.weight.value, ko, ki, block,
                                                {static_cast<int>(ko.size()), static_cast<int>(ki.size()),
                                                 info.spec.kernel_h, info.spec.kernel_w}));
        if (!src.bias.empty()) dst.bias = Parameter(select_rows(src.bias.value, ko));
        break;
      }
      case LayerKind::DepthwiseConv:
        dst.weight = Parameter(select_rows(src.weight.value, ko));
        if (!src.bias.empty()) dst.bias = Parameter(select_rows(src.bias.value, ko));
        break;
      case LayerKind::Linear: {
        const auto& ki = keep[static_cast<std::size_t>(info.in_group)];
        const std::size_t spatial = shape_numel(info.in_shape) / static_cast<std::size_t>(info.in_channels());
        dst.weight = Parameter(select_rows_cols(src.weight.value, ko, ki, spatial,
                                                {static_cast<int>(ko.size()), static_cast<int>(ki.size() * spatial)}));
        if (!src.bias.empty()) dst.bias = Parameter(select_rows(src.bias.value, ko));
        break;
      }
      case LayerKind::BatchNorm:
        dst.gamma = Parameter(select_rows(src.gamma.value, ko));
        dst.beta = Parameter(select_rows(src.beta.value, ko));
        dst.stats.mean = select_rows(src.stats.mean, ko);
        dst.stats.var = select_rows(src.stats.var, ko);
        break;
      default:
        break;
    }
  }

  // Gates; filters kept only for a group union are silenced.
  for (std::size_t gi = 0; gi < graph.gates().size(); ++gi) {
    const GateVector& old = graph.gates()[gi];
    const int li = graph.gated_layers()[gi];
    const LayerInfo& info = graph.layer(li);
    const auto& ko = keep[static_cast<std::size_t>(info.group)];
    GateVector& nv = out.gates_[gi];
    LayerWeights& w = out.weights_[static_cast<std::size_t>(li)];
    for (std::size_t j = 0; j < ko.size(); ++j) {
      if (old.status[static_cast<std::size_t>(ko[j])] == GateStatus::Retained) {
        nv.retain(static_cast<int>(j));
        continue;
      }
      nv.prune(static_cast<int>(j));
      const std::size_t row_len = w.weight.value.numel() / static_cast<std::size_t>(w.weight.value.dim(0));
      std::fill_n(w.weight.value.data().begin() + static_cast<std::ptrdiff_t>(j * row_len), row_len, 0.0);
      if (!w.bias.empty()) w.bias.value[j] = 0.0;
      if (info.gate_site != li) {
        LayerWeights& bn = out.weights_[static_cast<std::size_t>(info.gate_site)];
        bn.gamma.value[j] = 0.0;
        bn.beta.value[j] = 0.0;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

std::vector<std::string> validate_graph(const NetworkGraph& graph) {
  std::vector<std::string> issues;
  if (graph.gates().size() != graph.gated_layers().size()) {
    issues.push_back("gate vector count " + std::to_string(graph.gates().size()) + " differs from gated layer count " +
                     std::to_string(graph.gated_layers().size()));
    return issues;
  }
  for (std::size_t gi = 0; gi < graph.gates().size(); ++gi) {
    const GateVector& gv = graph.gates()[gi];
    const LayerInfo& info = graph.layer(graph.gated_layers()[gi]);
    const std::string where = "layer '" + info.spec.id + "'";
    if (gv.layer_id != info.spec.id) issues.push_back(where + ": gate vector belongs to '" + gv.layer_id + "'");
    if (static_cast<int>(gv.values.size()) != info.out_channels() || gv.status.size() != gv.values.size()) {
      issues.push_back(where + ": gate length " + std::to_string(gv.values.size()) + " != filters " +
                       std::to_string(info.out_channels()));
      continue;
    }
    for (std::size_t c = 0; c < gv.size(); ++c) {
      const double v = gv.values[c];
      const std::string at = where + " gate " + std::to_string(c);
      if (!(v >= 0.0) || !std::isfinite(v)) issues.push_back(at + ": value " + std::to_string(v) + " is not >= 0");
      if (gv.status[c] == GateStatus::Pruned && v != 0.0) issues.push_back(at + ": pruned gate has nonzero value");
      if (gv.status[c] == GateStatus::Retained && v != 1.0) issues.push_back(at + ": retained gate is not 1");
    }
  }
  for (const LayerInfo& info : graph.layers()) {
    const LayerWeights& w = graph.weights(graph.index_of(info.spec.id));
    const std::string where = "layer '" + info.spec.id + "'";
    switch (info.spec.kind) {
      case LayerKind::Conv:
        if (w.weight.value.shape() !=
            Shape{info.out_channels(), info.in_channels(), info.spec.kernel_h, info.spec.kernel_w}) {
          issues.push_back(where + ": weight shape " + shape_str(w.weight.value.shape()) + " inconsistent");
        }
        break;
      case LayerKind::DepthwiseConv:
        if (w.weight.value.shape() != Shape{info.out_channels(), 1, info.spec.kernel_h, info.spec.kernel_w}) {
          issues.push_back(where + ": weight shape " + shape_str(w.weight.value.shape()) + " inconsistent");
        }
        break;
      case LayerKind::Linear:
        if (w.weight.value.shape() != Shape{info.out_channels(), static_cast<int>(shape_numel(info.in_shape))}) {
          issues.push_back(where + ": weight shape " + shape_str(w.weight.value.shape()) + " inconsistent");
        }
        break;
      case LayerKind::BatchNorm:
        if (w.gamma.value.shape() != Shape{info.out_channels()} || w.beta.value.shape() != Shape{info.out_channels()}) {
          issues.push_back(where + ": affine parameters inconsistent with channels");
        }
        break;
      default:
        break;
    }
  }
  return issues;
}

}  // namespace dagger
