#pragma once

// Run configuration. Stored as a JSON document with explicit sections; keys
// that are absent keep their defaults, unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "anyssr/encoder.hpp"
#include "anyssr/features.hpp"
#include "anyssr/router.hpp"
#include "anyssr/stream.hpp"

namespace anyssr {

struct PipelineSettings {
  Index expanded_dim = 512;
  double lambda = 1.0;
  ScaleMode scale_mode = ScaleMode::kInvSqrtInput;
  std::uint64_t seed = 2;
  bool operator==(const PipelineSettings&) const = default;
};

struct RouterSettings {
  Index chunk_rows = kDefaultChunkRows;
  bool generalist_route = false;
  bool reroute_per_token = false;
  bool operator==(const RouterSettings&) const = default;
};

/// Arrival order: 1, 2, or an explicit permutation (`which` = 0).
struct OrderSpec {
  int which = 1;
  std::vector<TaskId> custom;

  std::vector<TaskId> resolve(Index tasks) const;
  bool operator==(const OrderSpec&) const = default;
};

struct BaselineSettings {
  Index bp_hidden = 64;
  double bp_learning_rate = 0.05;
  Index bp_epochs = 30;
  std::uint64_t bp_seed = 5;
  bool operator==(const BaselineSettings&) const = default;
};

struct RunConfig {
  EncoderConfig encoder;
  PipelineSettings pipeline;
  StreamSpec stream;
  std::uint64_t stream_seed = 3;
  OrderSpec order;
  AdapterHyper adapter;
  RouterSettings router;
  BaselineSettings baselines;

  void validate() const;
  /// Sets every component seed from one master seed.
  void reseed(std::uint64_t master);
};

bool operator==(const RunConfig& a, const RunConfig& b);

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const RunConfig& config);

}  // namespace anyssr
