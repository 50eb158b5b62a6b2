#pragma once

// Router feature path: mean-pool a lower-layer feature sequence, then lift it
// through a frozen Gaussian projection followed by a rectifier.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "anyssr/linalg.hpp"

namespace anyssr {

enum class ScaleMode {
  kInvSqrtInput,  // std = 1/sqrt(d)
  kUnit,          // std = 1
};

std::string_view to_string(ScaleMode mode);
ScaleMode parse_scale_mode(std::string_view text);

/// Average over the sequence axis of a T x d matrix.
Vector mean_pool(const Matrix& sequence);

class ExpansionPipeline {
public:
  /// Draws a d x E projection from `seed`. Warns (once per process) when E <= d.
  static ExpansionPipeline make(std::uint64_t seed, Index in_dim, Index out_dim,
                                ScaleMode mode = ScaleMode::kInvSqrtInput);

  /// Pipeline with an explicit projection, for tests and probes.
  static ExpansionPipeline with_projection(Matrix projection);

  Index in_dim() const { return projection_.rows(); }
  Index out_dim() const { return projection_.cols(); }
  std::uint64_t seed() const { return seed_; }
  ScaleMode scale_mode() const { return mode_; }
  const Matrix& projection() const { return projection_; }

  /// max(0, pooled · P)
  Vector expand(const Vector& pooled) const;

  /// Row-wise expand of an n x d matrix.
  Matrix expand_rows(const Matrix& pooled_rows) const;

private:
  ExpansionPipeline(Matrix projection, std::uint64_t seed, ScaleMode mode)
      : projection_(std::move(projection)), seed_(seed), mode_(mode) {}

  Matrix projection_;
  std::uint64_t seed_ = 0;
  ScaleMode mode_ = ScaleMode::kInvSqrtInput;
};

/// Training accuracy of a ridge classifier (the router's own closed-form
/// solve) fitted on per-task sample rows, optionally after expansion.
/// Each entry of `datasets_by_task` is an n_k x d matrix of pooled features.
double separability_probe(std::span<const Matrix> datasets_by_task,
                          const ExpansionPipeline* pipeline = nullptr, double lambda = 1.0);

}  // namespace anyssr
