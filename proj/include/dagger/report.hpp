// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_REPORT_HPP
#define DAGGER_REPORT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dagger/graph.hpp"
#include "dagger/pruner.hpp"

namespace dagger {

void write_text_file(const std::string& path, const std::string& text);

/// round,pruned_count,flops_before,flops_after,task_loss,gate_loss
std::string events_csv(const std::vector<PruneEvent>& events);

struct LayerCount {
  std::string layer_id;
  int filters = 0;
  int retained = 0;  // gates not pruned
  int pruned = 0;
};

/// Per gated layer counts from gate statuses.
std::vector<LayerCount> layer_counts(const NetworkGraph& graph);
/// layer_id,filters,retained,pruned
std::string layer_counts_csv(const std::vector<LayerCount>& counts);

/// Summary object: final FLOPs, parameter count of the materialized network,
/// rounds, per-layer counts and whatever `metrics` holds. `decided` is the
/// source graph with every gate pruned or retained.
nlohmann::json prune_summary(const NetworkGraph& decided, const PruneState& state, const nlohmann::json& metrics);

/// Writes events.csv, layers.csv and summary.json into `dir`.
void write_report(const PruneState& state, const NetworkGraph& decided, const nlohmann::json& metrics,
                  const std::string& dir);

/// P5 8-bit grayscale image.
std::string pgm_bytes(int width, int height, const std::vector<std::uint8_t>& pixels);
/// Min-max maps a plane to 0..255; a constant plane maps to all zeros.
std::vector<std::uint8_t> normalize_plane(const double* plane, std::size_t count);

/// One PGM per channel of `layer_id`'s (gated) output for the first sample
/// of `batch`, named filter_<index>_<status>.pgm. Returns the file paths.
std::vector<std::string> dump_feature_maps(NetworkGraph& graph, const Tensor& batch, const std::string& layer_id,
                                           const std::string& out_dir);

}  // namespace dagger

#endif  // DAGGER_REPORT_HPP
