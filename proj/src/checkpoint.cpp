// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include "dagger/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "dagger/error.hpp"

namespace dagger {

using nlohmann::json;

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const NamedArray& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

namespace {

void put_param(Checkpoint& c, const std::string& name, const Parameter& p) {
  if (p.empty()) return;
  c.arrays.push_back({name, p.value.shape(), p.value.vec()});
  c.arrays.push_back({name + ".momentum", p.value.shape(), p.momentum});
}

void put_tensor(Checkpoint& c, const std::string& name, const Tensor& t) {
  if (!t.empty()) c.arrays.push_back({name, t.shape(), t.vec()});
}

const NamedArray& need(const Checkpoint& c, const std::string& name, const Shape& shape) {
  const NamedArray* a = c.find(name);
  if (!a) throw DataError("checkpoint: missing array '" + name + "'");
  if (a->shape != shape) {
    throw DataError("checkpoint: array '" + name + "' has shape " + shape_str(a->shape) + ", expected " +
                    shape_str(shape));
  }
  return *a;
}

void get_param(const Checkpoint& c, const std::string& name, Parameter& p) {
  if (p.empty()) return;
  const NamedArray& a = need(c, name, p.value.shape());
  std::copy(a.data.begin(), a.data.end(), p.value.data().begin());
  if (const NamedArray* m = c.find(name + ".momentum")) {
    if (m->data.size() != p.momentum.size()) throw DataError("checkpoint: momentum size mismatch for '" + name + "'");
    p.momentum = m->data;
  }
}

void get_tensor(const Checkpoint& c, const std::string& name, Tensor& t) {
  if (t.empty()) return;
  const NamedArray& a = need(c, name, t.shape());
  std::copy(a.data.begin(), a.data.end(), t.data().begin());
}

GateStatus status_from_string(const std::string& s) {
  if (s == "active") return GateStatus::Active;
  if (s == "pruned") return GateStatus::Pruned;
  if (s == "retained") return GateStatus::Retained;
  throw DataError("checkpoint: unknown gate status '" + s + "'");
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint64_t get_le(const std::vector<std::uint8_t>& in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) v |= std::uint64_t{in[at + static_cast<std::size_t>(b)]} << (8 * b);
  return v;
}

}  // namespace

Checkpoint make_checkpoint(const NetworkGraph& graph, const DaggerBank* bank, json metadata) {
  Checkpoint c;
  c.config_text = format_network_config(graph.config());
  c.metadata = std::move(metadata);
  const auto layers = graph.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string& id = layers[i].spec.id;
    const LayerWeights& w = graph.weights(static_cast<int>(i));
    put_param(c, id + "/weight", w.weight);
    put_param(c, id + "/bias", w.bias);
    put_param(c, id + "/gamma", w.gamma);
    put_param(c, id + "/beta", w.beta);
    put_tensor(c, id + "/running_mean", w.stats.mean);
    put_tensor(c, id + "/running_var", w.stats.var);
  }
  for (const GateVector& gv : graph.gates()) {
    c.arrays.push_back({"gates/" + gv.layer_id, {static_cast<int>(gv.size())}, gv.values});
    c.gate_status.emplace_back(gv.layer_id, gv.status);
  }
  if (bank) {
    c.has_dagger = true;
    for (const DaggerParams& m : bank->modules) {
      const std::string p = "dagger/" + m.layer_id;
      put_param(c, p + "/fc1_weight", m.fc1_weight);
      put_param(c, p + "/fc1_bias", m.fc1_bias);
      put_param(c, p + "/fc2_weight", m.fc2_weight);
      put_param(c, p + "/fc2_bias", m.fc2_bias);
      c.dagger_offsets.push_back(m.offset);
    }
  }
  return c;
}

NetworkGraph checkpoint_graph(const Checkpoint& c) {
  NetworkGraph g = build_graph(parse_network_config(c.config_text), 0);
  const auto layers = g.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string id = layers[i].spec.id;
    LayerWeights& w = g.weights(static_cast<int>(i));
    get_param(c, id + "/weight", w.weight);
    get_param(c, id + "/bias", w.bias);
    get_param(c, id + "/gamma", w.gamma);
    get_param(c, id + "/beta", w.beta);
    get_tensor(c, id + "/running_mean", w.stats.mean);
    get_tensor(c, id + "/running_var", w.stats.var);
  }
  if (c.gate_status.size() != g.gates().size()) {
    throw DataError("checkpoint: " + std::to_string(c.gate_status.size()) + " gate vectors for " +
                    std::to_string(g.gates().size()) + " gated layers");
  }
  for (std::size_t gi = 0; gi < g.gates().size(); ++gi) {
    GateVector& gv = g.gates()[gi];
    const auto& [id, status] = c.gate_status[gi];
    if (id != gv.layer_id || status.size() != gv.size()) {
      throw DataError("checkpoint: gate vector for '" + id + "' does not match layer '" + gv.layer_id + "'");
    }
    gv.status = status;
    gv.values = need(c, "gates/" + id, {static_cast<int>(gv.size())}).data;
  }
  return g;
}

DaggerBank checkpoint_bank(const Checkpoint& c) {
  if (!c.has_dagger) throw DataError("checkpoint holds no Dagger parameters");
  const NetworkGraph g = checkpoint_graph(c);
  DaggerBank bank = dagger_init(g, 0);
  if (c.dagger_offsets.size() != bank.size()) throw DataError("checkpoint: Dagger bank size mismatch");
  for (std::size_t i = 0; i < bank.size(); ++i) {
    DaggerParams& m = bank.modules[i];
    const std::string p = "dagger/" + m.layer_id;
    // Hidden width is taken from the stored arrays.
    const NamedArray* fc1 = c.find(p + "/fc1_weight");
    if (!fc1 || fc1->shape.size() != 2) throw DataError("checkpoint: missing array '" + p + "/fc1_weight'");
    const int h = fc1->shape[0], n = m.filters();
    m.fc1_weight = Parameter(Tensor({h, n}));
    m.fc1_bias = Parameter(Tensor({h}));
    m.fc2_weight = Parameter(Tensor({n, h}));
    get_param(c, p + "/fc1_weight", m.fc1_weight);
    get_param(c, p + "/fc1_bias", m.fc1_bias);
    get_param(c, p + "/fc2_weight", m.fc2_weight);
    get_param(c, p + "/fc2_bias", m.fc2_bias);
    m.offset = c.dagger_offsets[i];
  }
  return bank;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  json header;
  header["config"] = c.config_text;
  json dir = json::array();
  for (const NamedArray& a : c.arrays) {
    if (shape_numel(a.shape) != a.data.size()) throw DataError("checkpoint: array '" + a.name + "' size mismatch");
    dir.push_back({{"name", a.name}, {"shape", a.shape}});
  }
  header["arrays"] = dir;
  json gates = json::array();
  for (const auto& [id, status] : c.gate_status) {
    json s = json::array();
    for (GateStatus st : status) s.push_back(std::string(to_string(st)));
    gates.push_back({{"layer", id}, {"status", s}});
  }
  header["gates"] = gates;
  if (c.has_dagger) header["dagger_offsets"] = c.dagger_offsets;
  header["metadata"] = c.metadata;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out{'D', 'G', 'P', 'R'};
  put_u32(out, c.version);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const NamedArray& a : c.arrays) {
    for (double v : a.data) {
      const auto f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      put_u32(out, bits);
    }
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& in, const std::string& source) {
  if (in.size() < 16) throw DataError(source + ": file too short for a checkpoint header");
  for (std::size_t i = 0; i < 4; ++i) {
    if (in[i] != static_cast<std::uint8_t>("DGPR"[i])) {
      throw DataError(source + ": bad checkpoint magic at offset " + std::to_string(i));
    }
  }
  Checkpoint c;
  c.version = static_cast<std::uint32_t>(get_le(in, 4, 4));
  if (c.version != kCheckpointVersion) {
    throw DataError(source + ": unsupported checkpoint version " + std::to_string(c.version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t len = get_le(in, 8, 8);
  if (len > in.size() - 16) throw DataError(source + ": header length " + std::to_string(len) + " exceeds file size");
  json header;
  try {
    header = json::parse(in.begin() + 16, in.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    c.config_text = header.at("config").get<std::string>();
    std::size_t at = 16 + len;
    for (const json& e : header.at("arrays")) {
      NamedArray a;
      a.name = e.at("name").get<std::string>();
      a.shape = e.at("shape").get<Shape>();
      const std::size_t n = shape_numel(a.shape);
      if (in.size() - at < 4 * n) {
        throw DataError(source + ": array '" + a.name + "' at offset " + std::to_string(at) + " runs past end of file");
      }
      a.data.resize(n);
      for (std::size_t k = 0; k < n; ++k, at += 4) {
        const auto bits = static_cast<std::uint32_t>(get_le(in, at, 4));
        float f;
        std::memcpy(&f, &bits, sizeof f);
        a.data[k] = f;
      }
      c.arrays.push_back(std::move(a));
    }
    if (at != in.size()) {
      throw DataError(source + ": " + std::to_string(in.size() - at) + " trailing bytes after offset " +
                      std::to_string(at));
    }
    for (const json& e : header.at("gates")) {
      std::vector<GateStatus> st;
      for (const json& s : e.at("status")) st.push_back(status_from_string(s.get<std::string>()));
      c.gate_status.emplace_back(e.at("layer").get<std::string>(), std::move(st));
    }
    if (header.contains("dagger_offsets")) {
      c.has_dagger = true;
      c.dagger_offsets = header.at("dagger_offsets").get<std::vector<double>>();
    }
    c.metadata = header.value("metadata", json::object());
  } catch (const json::exception& e) {
    throw DataError(source + ": malformed checkpoint header: " + e.what());
  } catch (const ShapeError& e) {
    throw DataError(source + ": " + e.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path);
}

}  // namespace dagger
