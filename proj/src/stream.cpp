#include "anyssr/stream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "anyssr/rng.hpp"

namespace anyssr {

void StreamSpec::validate(Index vocab) const {
  if (tasks < 1) throw std::invalid_argument("stream: need at least one task");
  if (!(separation >= 0.0 && separation <= 1.0)) {
    std::ostringstream msg;
    msg << "stream: separation must lie in [0, 1], got " << separation;
    throw std::invalid_argument(msg.str());
  }
  if (context_len < 1) throw std::invalid_argument("stream: context_len must be >= 1");
  if (query_tokens < 1 || answer_tokens < 1 || common_tokens < 1) {
    throw std::invalid_argument("stream: token regions must be non-empty");
  }
  if (!(train_fraction > 0.0) || !(router_fraction > 0.0) || train_fraction + router_fraction >= 1.0) {
    throw std::invalid_argument("stream: fractions must be positive and leave room for an eval split");
  }
  const auto n = static_cast<double>(samples_per_task);
  const auto train = static_cast<Index>(std::llround(train_fraction * n));
  const auto router = static_cast<Index>(std::llround(router_fraction * n));
  if (train < 1 || router < 2 || samples_per_task - train - router < 1) {
    throw std::invalid_argument("stream: samples_per_task too small for the requested splits");
  }
  vocab_layout(*this, vocab);
}

VocabLayout vocab_layout(const StreamSpec& spec, Index vocab) {
  VocabLayout layout{};
  layout.query_begin = 1;
  layout.answer_begin = static_cast<Token>(layout.query_begin + spec.query_tokens);
  layout.common_begin = static_cast<Token>(layout.answer_begin + spec.answer_tokens);
  layout.context_begin = static_cast<Token>(layout.common_begin + spec.common_tokens);
  const Index remaining = vocab - layout.context_begin;
  layout.context_per_task = spec.tasks > 0 ? remaining / spec.tasks : 0;
  if (layout.context_per_task < 1) {
    std::ostringstream msg;
    msg << "stream: vocabulary of " << vocab << " tokens cannot hold " << spec.tasks << " private context regions";
    throw std::invalid_argument(msg.str());
  }
  return layout;
}

namespace {

TrainingExample draw_sample(Rng& rng, const StreamSpec& spec, const VocabLayout& layout, TaskId task,
                            const std::vector<Index>& rule) {
  TrainingExample ex;
  const Token region = static_cast<Token>(layout.context_begin + task * layout.context_per_task);
  for (Index i = 0; i < spec.context_len; ++i) {
    if (rng.bernoulli(spec.separation)) {
      ex.prompt.push_back(static_cast<Token>(region + rng.uniform_index(static_cast<std::uint64_t>(layout.context_per_task))));
    } else {
      ex.prompt.push_back(
          static_cast<Token>(layout.common_begin + rng.uniform_index(static_cast<std::uint64_t>(spec.common_tokens))));
    }
  }
  const auto query = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(spec.query_tokens)));
  ex.prompt.push_back(static_cast<Token>(layout.query_begin + query));
  ex.answer.push_back(static_cast<Token>(layout.answer_begin + rule[static_cast<std::size_t>(query)]));
  return ex;
}

std::vector<Index> draw_rule(std::uint64_t seed, const StreamSpec& spec) {
  Rng rng(seed);
  std::vector<Index> rule(static_cast<std::size_t>(spec.query_tokens));
  for (std::size_t i = 0; i < rule.size(); ++i) {
    rule[i] = static_cast<Index>(i % static_cast<std::size_t>(spec.answer_tokens));
  }
  for (std::size_t i = rule.size(); i > 1; --i) std::swap(rule[i - 1], rule[rng.uniform_index(i)]);
  return rule;
}

}  // namespace

TaskStream generate_task_stream(const StreamSpec& spec, Index vocab, std::uint64_t seed) {
  spec.validate(vocab);
  const VocabLayout layout = vocab_layout(spec, vocab);
  TaskStream stream;
  stream.spec = spec;
  stream.vocab = vocab;
  stream.seed = seed;
  const auto n = static_cast<double>(spec.samples_per_task);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * n));
  const auto n_router = static_cast<std::size_t>(std::llround(spec.router_fraction * n));
  for (TaskId id = 0; id < static_cast<TaskId>(spec.tasks); ++id) {
    TaskData task;
    task.id = id;
    task.answer_rule = draw_rule(derive_seed(seed, seed_tag::kTaskRule, static_cast<std::uint64_t>(id)), spec);
    Rng rng(derive_seed(seed, seed_tag::kTaskData, static_cast<std::uint64_t>(id)));
    for (std::size_t i = 0; i < static_cast<std::size_t>(spec.samples_per_task); ++i) {
      TrainingExample ex = draw_sample(rng, spec, layout, id, task.answer_rule);
      if (i < n_train) {
        task.train.push_back(std::move(ex));
      } else if (i < n_train + n_router) {
        task.router_fit.push_back(std::move(ex));
      } else {
        task.eval.push_back(std::move(ex));
      }
    }
    stream.tasks.push_back(std::move(task));
  }
  Rng generic(derive_seed(seed, seed_tag::kGeneralist));
  for (std::size_t i = 0; i < n_router; ++i) {
    Prompt p;
    for (Index t = 0; t < spec.context_len; ++t) {
      p.push_back(static_cast<Token>(layout.common_begin +
                                     generic.uniform_index(static_cast<std::uint64_t>(spec.common_tokens))));
    }
    p.push_back(static_cast<Token>(layout.query_begin +
                                   generic.uniform_index(static_cast<std::uint64_t>(spec.query_tokens))));
    stream.generic.push_back(std::move(p));
  }
  return stream;
}

std::vector<Prompt> prompts_of(std::span<const TrainingExample> examples) {
  std::vector<Prompt> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(ex.prompt);
  return out;
}

std::vector<TaskId> order_permutation(int which, Index tasks) {
  if (tasks < 1) throw std::invalid_argument("order: need at least one task");
  std::vector<TaskId> order;
  if (which == 1) {
    order.resize(static_cast<std::size_t>(tasks));
    std::iota(order.begin(), order.end(), 0);
    return order;
  }
  if (which != 2) throw std::invalid_argument("order: expected 1 or 2");
  for (TaskId id : {5, 6, 1, 7, 0, 3, 2, 4}) {
    if (id < tasks) order.push_back(id);
  }
  for (TaskId id = 8; id < static_cast<TaskId>(tasks); ++id) order.push_back(id);
  return order;
}

void validate_order(std::span<const TaskId> order, Index tasks) {
  std::vector<TaskId> sorted(order.begin(), order.end());
  std::sort(sorted.begin(), sorted.end());
  bool ok = static_cast<Index>(sorted.size()) == tasks;
  for (std::size_t i = 0; ok && i < sorted.size(); ++i) ok = sorted[i] == static_cast<TaskId>(i);
  if (!ok) throw std::invalid_argument("order: not a permutation of the task ids");
}

TrainingLease::TrainingLease(TaskId task, std::vector<TrainingExample> train,
                             std::vector<TrainingExample> router_fit, std::shared_ptr<std::multiset<TaskId>> live)
    : task_(task), train_(std::move(train)), router_fit_(std::move(router_fit)), live_(std::move(live)) {
  if (live_) live_->insert(task_);
}

TrainingLease::TrainingLease(TrainingLease&& other) noexcept
    : task_(other.task_),
      train_(std::move(other.train_)),
      router_fit_(std::move(other.router_fit_)),
      live_(std::move(other.live_)) {}

TrainingLease::~TrainingLease() {
  if (live_) live_->erase(live_->find(task_));
}

StreamSource::StreamSource(const TaskStream& stream)
    : stream_(stream), live_(std::make_shared<std::multiset<TaskId>>()) {}

Index StreamSource::task_count() const { return static_cast<Index>(stream_.tasks.size()); }

TrainingLease StreamSource::lease_training(TaskId task) {
  const auto& data = stream_.tasks.at(static_cast<std::size_t>(task));
  lease_log_.push_back(task);
  return TrainingLease(task, data.train, data.router_fit, live_);
}

std::span<const TrainingExample> StreamSource::eval_split(TaskId task) const {
  return stream_.tasks.at(static_cast<std::size_t>(task)).eval;
}

std::span<const Prompt> StreamSource::generic_prompts() const { return stream_.generic; }

std::vector<TaskId> StreamSource::live_leases() const { return {live_->begin(), live_->end()}; }

std::vector<Matrix> xor_probe_datasets(std::uint64_t seed, Index per_cluster, double noise) {
  Rng rng(seed);
  std::vector<Matrix> tasks(2, Matrix(2 * per_cluster, 2));
  const double centers[4][2] = {{1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
  for (int c = 0; c < 4; ++c) {
    Matrix& target = tasks[static_cast<std::size_t>(c / 2)];
    const Index offset = (c % 2) * per_cluster;
    for (Index i = 0; i < per_cluster; ++i) {
      target(offset + i, 0) = rng.normal(centers[c][0], noise);
      target(offset + i, 1) = rng.normal(centers[c][1], noise);
    }
  }
  return tasks;
}

}  // namespace anyssr
