// Copyright 2026 The Dagger Prune Authors
// Licensed under the Apache License, Version 2.0

#ifndef DAGGER_CHECKPOINT_HPP
#define DAGGER_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dagger/dagger_module.hpp"
#include "dagger/graph.hpp"

namespace dagger {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

/// In-memory checkpoint. File layout:
///   "DGPR" | u32 LE version | u64 LE header length | UTF-8 JSON header |
///   arrays as LE float32 in directory order.
/// The header holds the network config text, the array directory (name,
/// shape), gate statuses, Dagger offsets and free-form metadata.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::vector<NamedArray> arrays;
  /// Per gated layer: layer id and statuses.
  std::vector<std::pair<std::string, std::vector<GateStatus>>> gate_status;
  /// Offsets of the Dagger modules when a bank was stored.
  std::vector<double> dagger_offsets;
  bool has_dagger = false;
  nlohmann::json metadata = nlohmann::json::object();

  const NamedArray* find(const std::string& name) const;
};

/// Captures weights, running statistics, optimizer momentum, gates and
/// (optionally) a Dagger bank with its momentum.
Checkpoint make_checkpoint(const NetworkGraph& graph, const DaggerBank* bank = nullptr,
                           nlohmann::json metadata = nlohmann::json::object());
/// Rebuilds the graph and copies every stored array into it.
NetworkGraph checkpoint_graph(const Checkpoint& ckpt);
DaggerBank checkpoint_bank(const Checkpoint& ckpt);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dagger

#endif  // DAGGER_CHECKPOINT_HPP
