#include "anyssr/router.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

namespace anyssr {

namespace {

void require_lambda(double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    std::ostringstream msg;
    msg << "router: lambda must be a positive finite number, got " << lambda;
    throw std::invalid_argument(msg.str());
  }
}

Matrix pad_columns(const Matrix& labels, Index width) {
  if (labels.cols() == width) return labels;
  Matrix padded = Matrix::Zero(labels.rows(), width);
  padded.leftCols(labels.cols()) = labels;
  return padded;
}

void check_batch_for_state(const RlsState& state, const ExpandedBatch& batch) {
  if (batch.features.cols() != state.dim()) {
    std::ostringstream msg;
    msg << "router update: feature width " << batch.features.cols() << " != state dim " << state.dim();
    throw std::invalid_argument(msg.str());
  }
  if (batch.labels.rows() != batch.features.rows()) {
    throw std::invalid_argument("router update: label and feature row counts differ");
  }
  if (batch.labels.cols() > state.task_count()) {
    std::ostringstream msg;
    msg << "router update: batch has " << batch.labels.cols() << " label columns but only "
        << state.task_count() << " tasks are registered (grow the label space first)";
    throw std::invalid_argument(msg.str());
  }
}

// One Woodbury step on a chunk of rows. Returns R' and leaves Q, W to callers.
Matrix woodbury_downdate(const Matrix& r, const Matrix& h) {
  const Matrix rht = r * h.transpose();  // E x m
  Matrix s = h * rht;                    // m x m
  s.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("router update: I + H R Hᵀ is not numerically positive definite");
  }
  Matrix next = r - rht * llt.solve(rht.transpose());
  // Keep R exactly symmetric; rounding in the two products is not.
  next = 0.5 * (next + next.transpose()).eval();
  return next;
}

template <typename Step>
RlsState fold_chunks(RlsState state, const ExpandedBatch& batch, Index chunk_rows, Step step) {
  check_batch_for_state(state, batch);
  if (chunk_rows < 1) throw std::invalid_argument("router update: chunk size must be >= 1");
  const Matrix labels = pad_columns(batch.labels, state.task_count());
  for (Index start = 0; start < batch.rows(); start += chunk_rows) {
    const Index m = std::min(chunk_rows, batch.rows() - start);
    step(state, batch.features.middleRows(start, m), labels.middleRows(start, m));
  }
  return state;
}

}  // namespace

ExpandedBatch ExpandedBatch::one_hot(Matrix features, std::span<const Index> columns, Index width) {
  if (static_cast<Index>(columns.size()) != features.rows()) {
    throw std::invalid_argument("one_hot: one label per feature row required");
  }
  Matrix labels = Matrix::Zero(features.rows(), width);
  for (Index i = 0; i < features.rows(); ++i) {
    const Index c = columns[static_cast<std::size_t>(i)];
    if (c < 0 || c >= width) throw std::invalid_argument("one_hot: label column out of range");
    labels(i, c) = 1.0;
  }
  return ExpandedBatch{std::move(features), std::move(labels)};
}

ExpandedBatch ExpandedBatch::one_hot(Matrix features, Index column, Index width) {
  std::vector<Index> columns(static_cast<std::size_t>(features.rows()), column);
  return one_hot(std::move(features), columns, width);
}

void ExpandedBatch::validate() const {
  if (labels.rows() != features.rows()) {
    throw std::invalid_argument("ExpandedBatch: label and feature row counts differ");
  }
  for (Index i = 0; i < labels.rows(); ++i) {
    Index ones = 0;
    for (Index j = 0; j < labels.cols(); ++j) {
      const double v = labels(i, j);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw std::invalid_argument("ExpandedBatch: label entries must be 0 or 1");
      }
    }
    if (ones != 1) throw std::invalid_argument("ExpandedBatch: label row is not one-hot");
  }
}

RlsState RlsState::init(Index dim, double lambda) {
  if (dim < 1) throw std::invalid_argument("router: dimension must be >= 1");
  require_lambda(lambda);
  Matrix r = Matrix::Identity(dim, dim) / lambda;
  return RlsState(std::move(r), Matrix(dim, 0), Matrix(dim, 0), lambda);
}

RlsState RlsState::from_parts(Matrix r, Matrix q, Matrix w, double lambda, double tolerance) {
  require_lambda(lambda);
  if (r.rows() < 1 || r.rows() != r.cols()) throw std::invalid_argument("router: R must be square");
  if (q.rows() != r.rows() || w.rows() != r.rows() || q.cols() != w.cols()) {
    throw std::invalid_argument("router: Q/W shapes do not match R");
  }
  if (symmetry_residual(r) > tolerance) throw std::invalid_argument("router: R is not symmetric");
  if (!is_positive_definite(r)) throw std::invalid_argument("router: R is not positive definite");
  if (max_abs_diff(r * q, w) > tolerance) throw std::invalid_argument("router: W != R Q");
  return RlsState(std::move(r), std::move(q), std::move(w), lambda);
}

RlsState init_state(Index dim, double lambda) { return RlsState::init(dim, lambda); }

Matrix solve_joint(std::span<const ExpandedBatch> batches, double lambda, Index dim) {
  require_lambda(lambda);
  if (dim < 1) throw std::invalid_argument("solve_joint: dimension must be >= 1");
  Index width = 0;
  for (const auto& b : batches) {
    if (b.features.cols() != dim) throw std::invalid_argument("solve_joint: feature dimension mismatch");
    if (b.labels.rows() != b.features.rows()) {
      throw std::invalid_argument("solve_joint: label and feature row counts differ");
    }
    width = std::max(width, b.labels.cols());
  }
  Matrix gram = lambda * Matrix::Identity(dim, dim);
  Matrix cross = Matrix::Zero(dim, width);
  for (const auto& b : batches) {
    gram.noalias() += b.features.transpose() * b.features;
    cross.noalias() += b.features.transpose() * pad_columns(b.labels, width);
  }
  if (width == 0) return Matrix(dim, 0);
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) throw std::runtime_error("solve_joint: Gram matrix not positive definite");
  return llt.solve(cross);
}

RlsState grow_label_space(RlsState state, Index new_tasks) {
  if (new_tasks < 1) throw std::invalid_argument("grow_label_space: new_tasks must be >= 1");
  const Index old = state.task_count();
  state.q_.conservativeResize(Eigen::NoChange, old + new_tasks);
  state.q_.rightCols(new_tasks).setZero();
  state.w_.conservativeResize(Eigen::NoChange, old + new_tasks);
  state.w_.rightCols(new_tasks).setZero();
  return state;
}

RlsState update(RlsState state, const ExpandedBatch& batch, Index chunk_rows) {
  return fold_chunks(std::move(state), batch, chunk_rows,
                     [](RlsState& s, const auto& h, const auto& y) {
                       s.r_ = woodbury_downdate(s.r_, h);
                       s.q_.noalias() += h.transpose() * y;
                       s.w_.noalias() = s.r_ * s.q_;
                     });
}

RlsState update_weight_direct(RlsState state, const ExpandedBatch& batch, Index chunk_rows) {
  return fold_chunks(std::move(state), batch, chunk_rows,
                     [](RlsState& s, const auto& h, const auto& y) {
                       s.r_ = woodbury_downdate(s.r_, h);
                       s.q_.noalias() += h.transpose() * y;
                       const Matrix gain = s.r_ * h.transpose();  // R' Hᵀ
                       const Matrix hw = h * s.w_;
                       s.w_ = s.w_ - gain * hw + gain * y;
                     });
}

Index argmax_lowest(const Eigen::Ref<const Vector>& values) {
  Index best = 0;
  for (Index i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

RouteDecision route(const Matrix& weights, const Vector& expanded) {
  if (weights.cols() == 0) throw std::invalid_argument("route: no tasks registered");
  if (expanded.size() != weights.rows()) {
    throw std::invalid_argument("route: expanded feature length does not match router dimension");
  }
  const Vector logits = weights.transpose() * expanded;
  RouteDecision decision;
  decision.selected = argmax_lowest(logits);
  const double top = logits[decision.selected];
  decision.probabilities = (logits.array() - top).exp().matrix();
  decision.probabilities /= decision.probabilities.sum();
  return decision;
}

}  // namespace anyssr
