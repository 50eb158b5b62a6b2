#pragma once

// Continual-learning loop, routed evaluation, forgetting metrics and the two
// ablation baselines (shared adapter, gradient-trained router).

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "anyssr/config.hpp"
#include "anyssr/inference.hpp"
#include "anyssr/stream.hpp"

namespace anyssr {

/// A[i][t]: score on the task learned in phase i after phase t (t >= i).
/// Cells above the diagonal's complement are never stored.
class AccuracyMatrix {
public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(Index tasks);

  Index size() const { return size_; }
  void set(Index task, Index phase, double score);
  std::optional<double> at(Index task, Index phase) const;
  bool column_complete(Index phase) const;

  bool operator==(const AccuracyMatrix&) const = default;

private:
  std::size_t slot(Index task, Index phase) const;

  Index size_ = 0;
  std::vector<std::optional<double>> cells_;
};

double compute_op(const AccuracyMatrix& a);
double compute_bwt(const AccuracyMatrix& a);

/// Routing accuracy after each phase, per seen task (in phase order).
struct RoutingAccuracyTrace {
  std::vector<std::vector<double>> per_task;
  std::vector<double> average;

  void push_phase(std::vector<double> accuracies);
  bool operator==(const RoutingAccuracyTrace&) const = default;
};

struct Model {
  FrozenEncoder encoder;
  ExpansionPipeline pipeline;
};

Model make_model(const RunConfig& config);

/// Adapter hyperparameters for one task; the seed depends only on the task
/// id, never on its arrival position.
AdapterHyper task_hyper(const AdapterHyper& base, TaskId task);

/// State of a continual run after `phases_done` phases.
struct ContinualRun {
  std::vector<TaskId> phase_tasks;
  Index phases_done = 0;
  RlsState state;
  AdapterBank bank;
  std::vector<TaskId> column_tasks;
  AccuracyMatrix accuracy;
  RoutingAccuracyTrace routing;
  /// Per phase: tasks whose training data was still held when the phase
  /// finished its router update. Audit only, not persisted.
  std::vector<std::vector<TaskId>> retained_training;

  RouterSnapshot snapshot() const { return {state.weights(), column_tasks}; }
};

using PhaseCallback = std::function<void(const ContinualRun&)>;

/// Fresh run state (phase 0), including the generalist column when enabled.
ContinualRun begin_continual(const Model& model, TaskSource& source, const RunConfig& config);

/// Runs the remaining phases of `run`. `on_phase` fires after each phase.
void continue_continual(ContinualRun& run, const Model& model, TaskSource& source, const RunConfig& config,
                        const PhaseCallback& on_phase = {});

ContinualRun run_continual(const Model& model, TaskSource& source, const RunConfig& config,
                           const PhaseCallback& on_phase = {});

/// Scores of one task's eval split under the current router and bank.
struct TaskEvaluation {
  double exact_match = 0.0;
  double routing_accuracy = 0.0;
  std::vector<InferenceResult> results;
};

TaskEvaluation evaluate_task(const Model& model, const RouterSnapshot& router, const AdapterBank& bank,
                             TaskId task, std::span<const TrainingExample> eval, const InferenceOptions& options);

InferenceOptions inference_options(const RunConfig& config, std::span<const TrainingExample> eval);

/// Two-layer perceptron router trained phase by phase with plain gradient
/// descent on each task's router-fit split only.
RoutingAccuracyTrace run_bp_router_baseline(const Model& model, TaskSource& source, const RunConfig& config);

/// One adapter trained sequentially on every task, no routing.
AccuracyMatrix run_single_adapter_baseline(const Model& model, TaskSource& source, const RunConfig& config);

/// Ridge-probe accuracy of the stream's router-fit prompts, on raw pooled
/// lower features or after expansion.
double stream_separability(const Model& model, const TaskStream& stream, bool expanded);

struct SweepCell {
  Index split_layer = 0;
  Index expanded_dim = 0;
  double op = 0.0;
  std::optional<double> bwt;
};

struct SweepResult {
  std::vector<Index> split_layers;
  std::vector<Index> expanded_dims;
  std::vector<SweepCell> cells;  // row-major over (split_layer, expanded_dim)
};

SweepResult run_sweep(const TaskStream& stream, const RunConfig& base, std::span<const Index> split_layers,
                      std::span<const Index> expanded_dims);

}  // namespace anyssr
