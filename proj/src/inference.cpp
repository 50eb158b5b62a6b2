#include "anyssr/inference.hpp"

#include <stdexcept>

namespace anyssr {

namespace {

const LowRankAdapter* adapter_for(const RouterSnapshot& router, const AdapterBank& bank, Index column,
                                  TaskId& task) {
  task = router.column_tasks.at(static_cast<std::size_t>(column));
  return task == kOriginTask ? nullptr : &bank.at(task);
}

}  // namespace

Vector routing_features(const FrozenEncoder& encoder, const ExpansionPipeline& pipeline,
                        std::span<const Token> tokens) {
  return pipeline.expand(mean_pool(encoder.forward_lower(tokens)));
}

InferenceResult run_inference(const FrozenEncoder& encoder, const ExpansionPipeline& pipeline,
                              const RouterSnapshot& router, const AdapterBank& bank, std::span<const Token> prompt,
                              const InferenceOptions& options) {
  if (static_cast<Index>(router.column_tasks.size()) != router.weights.cols()) {
    throw std::invalid_argument("run_inference: router columns and task map disagree");
  }
  InferenceResult result;
  result.decision = route(router.weights, routing_features(encoder, pipeline, prompt));
  const LowRankAdapter* chosen = adapter_for(router, bank, result.decision.selected, result.routed_task);
  if (!options.reroute_per_token) {
    result.answer = generate(encoder, chosen, prompt, options.max_len);
    return result;
  }
  result.answer = generate_with(
      encoder,
      [&](std::span<const Token> sequence) {
        const RouteDecision step = route(router.weights, routing_features(encoder, pipeline, sequence));
        TaskId ignored = 0;
        return adapter_for(router, bank, step.selected, ignored);
      },
      prompt, options.max_len);
  return result;
}

}  // namespace anyssr
