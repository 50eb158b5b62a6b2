#include "anyssr/features.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <vector>

#include "anyssr/rng.hpp"
#include "anyssr/router.hpp"

namespace anyssr {

std::string_view to_string(ScaleMode mode) {
  switch (mode) {
    case ScaleMode::kInvSqrtInput: return "inv_sqrt_d";
    case ScaleMode::kUnit: return "unit";
  }
  return "unknown";
}

ScaleMode parse_scale_mode(std::string_view text) {
  if (text == "inv_sqrt_d") return ScaleMode::kInvSqrtInput;
  if (text == "unit") return ScaleMode::kUnit;
  throw std::invalid_argument("unknown scale mode: " + std::string(text));
}

Vector mean_pool(const Matrix& sequence) {
  if (sequence.rows() == 0) throw std::invalid_argument("mean_pool: empty sequence");
  Vector sum = Vector::Zero(sequence.cols());
  for (Index t = 0; t < sequence.rows(); ++t) sum += sequence.row(t).transpose();
  return sum / static_cast<double>(sequence.rows());
}

ExpansionPipeline ExpansionPipeline::make(std::uint64_t seed, Index in_dim, Index out_dim, ScaleMode mode) {
  if (in_dim < 1 || out_dim < 1) throw std::invalid_argument("expansion: dimensions must be >= 1");
  if (out_dim <= in_dim) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true)) {
      std::cerr << "warning: expansion size " << out_dim << " does not exceed input size " << in_dim << '\n';
    }
  }
  const double stddev = mode == ScaleMode::kInvSqrtInput ? 1.0 / std::sqrt(static_cast<double>(in_dim)) : 1.0;
  Rng rng(seed);
  Matrix projection(in_dim, out_dim);
  // Row-major fill order is part of the reproducibility contract.
  for (Index i = 0; i < in_dim; ++i) {
    for (Index j = 0; j < out_dim; ++j) projection(i, j) = rng.normal(0.0, stddev);
  }
  return ExpansionPipeline(std::move(projection), seed, mode);
}

ExpansionPipeline ExpansionPipeline::with_projection(Matrix projection) {
  if (projection.rows() < 1 || projection.cols() < 1) throw std::invalid_argument("expansion: empty projection");
  return ExpansionPipeline(std::move(projection), 0, ScaleMode::kUnit);
}

Vector ExpansionPipeline::expand(const Vector& pooled) const {
  if (pooled.size() != in_dim()) {
    throw std::invalid_argument("expand: pooled length " + std::to_string(pooled.size()) +
                                " != pipeline input " + std::to_string(in_dim()));
  }
  return (projection_.transpose() * pooled).cwiseMax(0.0);
}

Matrix ExpansionPipeline::expand_rows(const Matrix& pooled_rows) const {
  if (pooled_rows.cols() != in_dim()) throw std::invalid_argument("expand_rows: width mismatch");
  // Row by row, so results match single-sample expand() bit for bit.
  Matrix out(pooled_rows.rows(), out_dim());
  for (Index i = 0; i < pooled_rows.rows(); ++i) out.row(i) = expand(pooled_rows.row(i).transpose()).transpose();
  return out;
}

double separability_probe(std::span<const Matrix> datasets_by_task, const ExpansionPipeline* pipeline,
                          double lambda) {
  if (datasets_by_task.size() < 2) throw std::invalid_argument("separability_probe: need at least two tasks");
  const Index tasks = static_cast<Index>(datasets_by_task.size());
  const Index width = datasets_by_task.front().cols();
  std::vector<ExpandedBatch> batches;
  batches.reserve(datasets_by_task.size());
  for (Index k = 0; k < tasks; ++k) {
    const Matrix& rows = datasets_by_task[static_cast<std::size_t>(k)];
    if (rows.rows() < 2) throw std::invalid_argument("separability_probe: each task needs >= 2 samples");
    if (rows.cols() != width) throw std::invalid_argument("separability_probe: feature width mismatch");
    Matrix features = pipeline ? pipeline->expand_rows(rows) : rows;
    batches.push_back(ExpandedBatch::one_hot(std::move(features), k, tasks));
  }
  const Index dim = batches.front().features.cols();
  const Matrix weights = solve_joint(batches, lambda, dim);

  Index correct = 0;
  Index total = 0;
  for (Index k = 0; k < tasks; ++k) {
    const Matrix logits = batches[static_cast<std::size_t>(k)].features * weights;
    for (Index i = 0; i < logits.rows(); ++i) {
      if (argmax_lowest(logits.row(i).transpose()) == k) ++correct;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace anyssr
