#pragma once

// Analytic task router: multi-output ridge regression over expanded features,
// solved either in one shot or recursively through the Woodbury identity.

#include <span>
#include <vector>

#include "anyssr/linalg.hpp"

namespace anyssr {

/// Expanded features (rows) with one-hot task labels.
struct ExpandedBatch {
  Matrix features;  // n x E
  Matrix labels;    // n x K

  Index rows() const { return features.rows(); }

  /// Builds one-hot labels of the given width from column indices.
  static ExpandedBatch one_hot(Matrix features, std::span<const Index> columns, Index width);
  static ExpandedBatch one_hot(Matrix features, Index column, Index width);

  /// Throws std::invalid_argument unless every label row is one-hot.
  void validate() const;
};

/// Sufficient statistics of the router.
///
///   R = (Σ HᵀH + λI)⁻¹   (E x E, symmetric positive definite)
///   Q = Σ HᵀY            (E x K)
///   W = R Q              (E x K)
class RlsState {
public:
  /// R = I/λ, no task columns.
  static RlsState init(Index dim, double lambda);

  /// Rebuilds a state from stored matrices. Validates shapes, symmetry and
  /// W = RQ (within `tolerance`).
  static RlsState from_parts(Matrix r, Matrix q, Matrix w, double lambda, double tolerance = 1e-9);

  Index dim() const { return r_.rows(); }
  Index task_count() const { return q_.cols(); }
  double lambda() const { return lambda_; }

  const Matrix& autocorrelation_inverse() const { return r_; }
  const Matrix& cross_correlation() const { return q_; }
  const Matrix& weights() const { return w_; }

  friend RlsState grow_label_space(RlsState state, Index new_tasks);
  friend RlsState update(RlsState state, const ExpandedBatch& batch, Index chunk_rows);
  friend RlsState update_weight_direct(RlsState state, const ExpandedBatch& batch, Index chunk_rows);

private:
  RlsState(Matrix r, Matrix q, Matrix w, double lambda)
      : r_(std::move(r)), q_(std::move(q)), w_(std::move(w)), lambda_(lambda) {}

  Matrix r_;
  Matrix q_;
  Matrix w_;
  double lambda_;
};

inline constexpr Index kDefaultChunkRows = 64;

RlsState init_state(Index dim, double lambda);

/// Closed-form ridge solution over all batches at once. Labels of narrower
/// batches are zero-padded to the widest batch. An empty list yields E x 0
/// for the provided `dim`.
Matrix solve_joint(std::span<const ExpandedBatch> batches, double lambda, Index dim);

/// Appends `new_tasks` zero columns to Q and W.
RlsState grow_label_space(RlsState state, Index new_tasks);

/// Recursive update; W' = R'Q'. Rows are folded in chunks of at most
/// `chunk_rows` per Woodbury step.
RlsState update(RlsState state, const ExpandedBatch& batch, Index chunk_rows = kDefaultChunkRows);

/// Same R and Q as `update`, but W is advanced directly:
///   W' = (I - R'HᵀH) W + R'HᵀY.
RlsState update_weight_direct(RlsState state, const ExpandedBatch& batch,
                              Index chunk_rows = kDefaultChunkRows);

struct RouteDecision {
  Vector probabilities;
  Index selected = 0;
};

/// softmax(h W) with max-subtraction; ties resolve to the lowest column.
RouteDecision route(const Matrix& weights, const Vector& expanded);

/// Index of the largest entry, lowest index on ties.
Index argmax_lowest(const Eigen::Ref<const Vector>& values);

}  // namespace anyssr
