// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#include "dagger/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dagger/error.hpp"
#include "dagger/flops.hpp"

namespace dagger {

namespace fs = std::filesystem;
using nlohmann::json;

void write_text_file(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f << text;
  if (!f) throw DataError("write failed for " + path);
}

std::string events_csv(const std::vector<PruneEvent>& events) {
  std::ostringstream os;
  os.precision(10);
  os << "round,pruned_count,flops_before,flops_after,task_loss,gate_loss\n";
  for (const PruneEvent& e : events) {
    os << e.round << ',' << e.pruned.size() << ',' << e.flops_before << ',' << e.flops_after << ',' << e.task_loss
       << ',' << e.gate_loss << '\n';
  }
  return os.str();
}

std::vector<LayerCount> layer_counts(const NetworkGraph& graph) {
  std::vector<LayerCount> out;
  for (const GateVector& gv : graph.gates()) {
    LayerCount c;
    c.layer_id = gv.layer_id;
    c.filters = static_cast<int>(gv.size());
    c.pruned = gv.count(GateStatus::Pruned);
    c.retained = c.filters - c.pruned;
    out.push_back(c);
  }
  return out;
}

std::string layer_counts_csv(const std::vector<LayerCount>& counts) {
  std::ostringstream os;
  os << "layer_id,filters,retained,pruned\n";
  for (const LayerCount& c : counts) os << c.layer_id << ',' << c.filters << ',' << c.retained << ',' << c.pruned << '\n';
  return os.str();
}

json prune_summary(const NetworkGraph& decided, const PruneState& state, const json& metrics) {
  json j;
  j["final_flops"] = total_flops_exact(decided);
  j["params"] = materialize_pruned(decided).parameter_count();
  j["rounds"] = state.round;
  j["retained_gates"] = state.one_gates.size();
  j["pruned_gates"] = state.zero_gates.size();
  json layers = json::array();
  for (const LayerCount& c : layer_counts(decided)) {
    layers.push_back({{"layer", c.layer_id}, {"filters", c.filters}, {"retained", c.retained}, {"pruned", c.pruned}});
  }
  j["layers"] = layers;
  j["metrics"] = metrics;
  return j;
}

void write_report(const PruneState& state, const NetworkGraph& decided, const json& metrics, const std::string& dir) {
  fs::create_directories(dir);
  write_text_file((fs::path(dir) / "events.csv").string(), events_csv(state.events));
  write_text_file((fs::path(dir) / "layers.csv").string(), layer_counts_csv(layer_counts(decided)));
  write_text_file((fs::path(dir) / "summary.json").string(), prune_summary(decided, state, metrics).dump(2) + "\n");
}

std::string pgm_bytes(int width, int height, const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw ShapeError("pgm: pixel count does not match " + std::to_string(width) + "x" + std::to_string(height));
  }
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> normalize_plane(const double* plane, std::size_t count) {
  std::vector<std::uint8_t> px(count, 0);
  if (count == 0) return px;
  const auto [lo, hi] = std::minmax_element(plane, plane + count);
  const double range = *hi - *lo;
  if (!(range > 0.0)) return px;
  for (std::size_t i = 0; i < count; ++i) {
    px[i] = static_cast<std::uint8_t>(std::lround((plane[i] - *lo) / range * 255.0));
  }
  return px;
}

std::vector<std::string> dump_feature_maps(NetworkGraph& graph, const Tensor& batch, const std::string& layer_id,
                                           const std::string& out_dir) {
  const int li = graph.index_of(layer_id);
  const LayerInfo& info = graph.layer(li);
  const int site = info.is_gated() ? info.gate_site : li;
  if (graph.layer(site).out_shape.size() != 3) {
    throw ConfigError("dump_feature_maps: layer '" + layer_id + "' has no spatial output");
  }
  Tape tape;
  std::vector<Var> trace;
  ForwardOptions fo;
  fo.trace = &trace;
  forward(tape, graph, tape.view(batch), fo);
  const Tensor& out = trace[static_cast<std::size_t>(site)].value();
  const int c = out.dim(1), h = out.dim(2), w = out.dim(3);
  fs::create_directories(out_dir);
  std::vector<std::string> paths;
  for (int f = 0; f < c; ++f) {
    std::string status = "ungated";
    if (info.is_gated()) {
      const GateVector& gv = graph.gates()[static_cast<std::size_t>(info.gate_index)];
      status = std::string(to_string(gv.status[static_cast<std::size_t>(f)]));
    }
    char name[64];
    std::snprintf(name, sizeof name, "filter_%03d_%s.pgm", f, status.c_str());
    const double* plane = out.data().data() + static_cast<std::size_t>(f) * h * w;
    const std::string path = (fs::path(out_dir) / name).string();
    write_text_file(path, pgm_bytes(w, h, normalize_plane(plane, static_cast<std::size_t>(h) * w)));
    paths.push_back(path);
  }
  return paths;
}

}  // namespace dagger
