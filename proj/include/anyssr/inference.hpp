#pragma once

// Routed generation: lower features -> mean-pool -> expand -> route ->
// adapter selection -> greedy decoding.

#include <span>
#include <vector>

#include "anyssr/encoder.hpp"
#include "anyssr/features.hpp"
#include "anyssr/router.hpp"

namespace anyssr {

/// Router column reserved for the no-adapter origin path.
inline constexpr TaskId kOriginTask = -1;

/// Immutable router weights plus the task id owning each column.
struct RouterSnapshot {
  Matrix weights;                  // E x K
  std::vector<TaskId> column_tasks;  // K entries
};

struct InferenceOptions {
  Index max_len = 2;
  bool reroute_per_token = false;
};

struct InferenceResult {
  std::vector<Token> answer;
  RouteDecision decision;
  TaskId routed_task = 0;
};

/// expand(mean_pool(forward_lower(tokens)))
Vector routing_features(const FrozenEncoder& encoder, const ExpansionPipeline& pipeline,
                        std::span<const Token> tokens);

InferenceResult run_inference(const FrozenEncoder& encoder, const ExpansionPipeline& pipeline,
                              const RouterSnapshot& router, const AdapterBank& bank, std::span<const Token> prompt,
                              const InferenceOptions& options);

}  // namespace anyssr
