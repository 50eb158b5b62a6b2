#pragma once

// Synthetic continual-learning task stream.
//
// Vocabulary layout (V = vocab):
//   0                      eos
//   [1, 1+Q)               query tokens, shared by all tasks
//   [1+Q, 1+Q+A)           answer tokens, shared by all tasks
//   [1+Q+A, 1+Q+A+C)       common context tokens
//   remainder              split into one private context region per task
//
// A prompt is `context_len` context tokens followed by one query token. Each
// context token comes from the task's private region with probability
// `separation`, otherwise from the common region. The answer is a single
// token: a task-specific permutation applied to the query. Tasks therefore
// disagree on the answer for every query, and are distinguishable only
// through their context.

#include <cstdint>
#include <memory>
#include <set>
#include <span>
#include <vector>

#include "anyssr/encoder.hpp"

namespace anyssr {


struct StreamSpec {
  Index tasks = 8;
  Index samples_per_task = 300;
  Index context_len = 6;
  double separation = 1.0;
  double train_fraction = 0.7;
  double router_fraction = 0.1;
  Index query_tokens = 8;
  Index answer_tokens = 8;
  Index common_tokens = 8;

  void validate(Index vocab) const;
  bool operator==(const StreamSpec&) const = default;
};

struct VocabLayout {
  Token query_begin;
  Token answer_begin;
  Token common_begin;
  Token context_begin;
  Index context_per_task;
};

VocabLayout vocab_layout(const StreamSpec& spec, Index vocab);

struct TaskData {
  TaskId id = 0;
  std::vector<Index> answer_rule;  // query index -> answer index
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> router_fit;
  std::vector<TrainingExample> eval;
};

struct TaskStream {
  StreamSpec spec;
  Index vocab = 0;
  std::uint64_t seed = 0;
  std::vector<TaskData> tasks;  // indexed by task id
  std::vector<Prompt> generic;  // task-agnostic prompts (common region only)
};

TaskStream generate_task_stream(const StreamSpec& spec, Index vocab, std::uint64_t seed);

std::vector<Prompt> prompts_of(std::span<const TrainingExample> examples);

/// Task arrival orders. Order 2 is the fixed 8-task permutation
/// 5,6,1,7,0,3,2,4; for other task counts it is filtered to the existing ids
/// and any ids >= 8 follow in ascending order.
std::vector<TaskId> order_permutation(int which, Index tasks);
void validate_order(std::span<const TaskId> order, Index tasks);

/// Training data of one task, handed out for the duration of one phase.
/// The owning source tracks how many leases are alive.
class TrainingLease {
public:
  TrainingLease(TaskId task, std::vector<TrainingExample> train, std::vector<TrainingExample> router_fit,
                std::shared_ptr<std::multiset<TaskId>> live);
  TrainingLease(TrainingLease&&) noexcept;
  TrainingLease& operator=(TrainingLease&&) = delete;
  TrainingLease(const TrainingLease&) = delete;
  ~TrainingLease();

  TaskId task() const { return task_; }
  std::span<const TrainingExample> train() const { return train_; }
  std::span<const TrainingExample> router_fit() const { return router_fit_; }

private:
  TaskId task_;
  std::vector<TrainingExample> train_;
  std::vector<TrainingExample> router_fit_;
  std::shared_ptr<std::multiset<TaskId>> live_;
};

/// Data access used by the continual loop. Training data is only reachable
/// through leases, which lets tests audit what the loop holds on to.
class TaskSource {
public:
  virtual ~TaskSource() = default;
  virtual Index task_count() const = 0;
  virtual TrainingLease lease_training(TaskId task) = 0;
  virtual std::span<const TrainingExample> eval_split(TaskId task) const = 0;
  virtual std::span<const Prompt> generic_prompts() const = 0;
  /// Tasks whose training data is currently leased out.
  virtual std::vector<TaskId> live_leases() const = 0;
};

/// In-memory source over a generated stream; records every lease request.
class StreamSource final : public TaskSource {
public:
  explicit StreamSource(const TaskStream& stream);

  Index task_count() const override;
  TrainingLease lease_training(TaskId task) override;
  std::span<const TrainingExample> eval_split(TaskId task) const override;
  std::span<const Prompt> generic_prompts() const override;
  std::vector<TaskId> live_leases() const override;

  const std::vector<TaskId>& lease_log() const { return lease_log_; }

private:
  const TaskStream& stream_;
  std::shared_ptr<std::multiset<TaskId>> live_;
  std::vector<TaskId> lease_log_;
};

/// Four Gaussian clusters at (±1, ±1); task 0 owns the (+,+) and (-,-)
/// clusters, task 1 the other two. Not linearly separable through the origin.
std::vector<Matrix> xor_probe_datasets(std::uint64_t seed, Index per_cluster = 100, double noise = 0.2);

}  // namespace anyssr
