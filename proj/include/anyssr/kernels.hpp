#pragma once

// Batched per-sample kernels. `serial` is the reference; `parallel` spreads
// samples over OpenMP threads. Samples never interact, so both produce
// bitwise-identical results.

#include <span>
#include <vector>

#include "anyssr/inference.hpp"

namespace anyssr {


namespace serial {

/// n x d matrix; row i = mean_pool(forward_lower(prompts[i])).
Matrix pooled_features(const FrozenEncoder& encoder, std::span<const Prompt> prompts);

/// n x E matrix; row i = expand(pooled.row(i)).
Matrix expand_rows(const ExpansionPipeline& pipeline, const Matrix& pooled);

std::vector<InferenceResult> run_inference_batch(const FrozenEncoder& encoder, const ExpansionPipeline& pipeline,
                                                 const RouterSnapshot& router, const AdapterBank& bank,
                                                 std::span<const Prompt> prompts, const InferenceOptions& options);

}  // namespace serial

namespace parallel {

Matrix pooled_features(const FrozenEncoder& encoder, std::span<const Prompt> prompts);

Matrix expand_rows(const ExpansionPipeline& pipeline, const Matrix& pooled);

std::vector<InferenceResult> run_inference_batch(const FrozenEncoder& encoder, const ExpansionPipeline& pipeline,
                                                 const RouterSnapshot& router, const AdapterBank& bank,
                                                 std::span<const Prompt> prompts, const InferenceOptions& options);

}  // namespace parallel

}  // namespace anyssr
