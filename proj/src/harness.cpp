#include "anyssr/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "anyssr/kernels.hpp"
#include "anyssr/rng.hpp"

namespace anyssr {

// ---- metrics ---------------------------------------------------------------

AccuracyMatrix::AccuracyMatrix(Index tasks) : size_(tasks), cells_(static_cast<std::size_t>(tasks * tasks)) {
  if (tasks < 1) throw std::invalid_argument("AccuracyMatrix: need at least one task");
}

std::size_t AccuracyMatrix::slot(Index task, Index phase) const {
  if (task < 0 || phase < 0 || task >= size_ || phase >= size_) {
    throw std::out_of_range("AccuracyMatrix: index out of range");
  }
  if (phase < task) throw std::out_of_range("AccuracyMatrix: a task has no score before it is learned");
  return static_cast<std::size_t>(task * size_ + phase);
}

void AccuracyMatrix::set(Index task, Index phase, double score) {
  if (!(score >= 0.0 && score <= 1.0)) throw std::invalid_argument("AccuracyMatrix: score outside [0, 1]");
  cells_[slot(task, phase)] = score;
}

std::optional<double> AccuracyMatrix::at(Index task, Index phase) const {
  if (phase < task) return std::nullopt;
  return cells_[slot(task, phase)];
}

bool AccuracyMatrix::column_complete(Index phase) const {
  for (Index i = 0; i <= phase; ++i) {
    if (!at(i, phase)) return false;
  }
  return true;
}

double compute_op(const AccuracyMatrix& a) {
  const Index k = a.size();
  if (k < 1 || !a.column_complete(k - 1)) throw std::invalid_argument("compute_op: final column incomplete");
  double sum = 0.0;
  for (Index i = 0; i < k; ++i) sum += *a.at(i, k - 1);
  return sum / static_cast<double>(k);
}

double compute_bwt(const AccuracyMatrix& a) {
  const Index k = a.size();
  if (k < 2) throw std::invalid_argument("compute_bwt: needs at least two tasks");
  if (!a.column_complete(k - 1)) throw std::invalid_argument("compute_bwt: final column incomplete");
  double sum = 0.0;
  for (Index i = 0; i + 1 < k; ++i) {
    const auto diag = a.at(i, i);
    if (!diag) throw std::invalid_argument("compute_bwt: missing diagonal entry");
    sum += *a.at(i, k - 1) - *diag;
  }
  return sum / static_cast<double>(k - 1);
}

void RoutingAccuracyTrace::push_phase(std::vector<double> accuracies) {
  const double avg = accuracies.empty() ? 0.0
                                        : std::accumulate(accuracies.begin(), accuracies.end(), 0.0) /
                                              static_cast<double>(accuracies.size());
  per_task.push_back(std::move(accuracies));
  average.push_back(avg);
}

// ---- setup -----------------------------------------------------------------

Model make_model(const RunConfig& config) {
  config.validate();
  return Model{FrozenEncoder(config.encoder),
               ExpansionPipeline::make(config.pipeline.seed, config.encoder.hidden, config.pipeline.expanded_dim,
                                       config.pipeline.scale_mode)};
}

AdapterHyper task_hyper(const AdapterHyper& base, TaskId task) {
  AdapterHyper h = base;
  h.seed = derive_seed(base.seed, seed_tag::kAdapterInit, static_cast<std::uint64_t>(task));
  return h;
}

InferenceOptions inference_options(const RunConfig& config, std::span<const TrainingExample> eval) {
  InferenceOptions options;
  std::size_t longest = 0;
  for (const auto& ex : eval) longest = std::max(longest, ex.answer.size());
  options.max_len = static_cast<Index>(longest) + 1;
  options.reroute_per_token = config.router.reroute_per_token;
  return options;
}

namespace {

Matrix expanded_features(const Model& model, std::span<const Prompt> prompts) {
  return parallel::expand_rows(model.pipeline, parallel::pooled_features(model.encoder, prompts));
}

}  // namespace

TaskEvaluation evaluate_task(const Model& model, const RouterSnapshot& router, const AdapterBank& bank,
                             TaskId task, std::span<const TrainingExample> eval, const InferenceOptions& options) {
  if (eval.empty()) throw std::invalid_argument("evaluate_task: empty eval split");
  const std::vector<Prompt> prompts = prompts_of(eval);
  TaskEvaluation out;
  out.results = parallel::run_inference_batch(model.encoder, model.pipeline, router, bank, prompts, options);
  Index exact = 0;
  Index routed = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    if (out.results[i].answer == eval[i].answer) ++exact;
    if (out.results[i].routed_task == task) ++routed;
  }
  const auto n = static_cast<double>(eval.size());
  out.exact_match = static_cast<double>(exact) / n;
  out.routing_accuracy = static_cast<double>(routed) / n;
  return out;
}

// ---- continual loop --------------------------------------------------------

ContinualRun begin_continual(const Model& model, TaskSource& source, const RunConfig& config) {
  config.validate();
  if (source.task_count() != config.stream.tasks) {
    throw std::invalid_argument("run_continual: source task count does not match config");
  }
  ContinualRun run{
      .phase_tasks = config.order.resolve(config.stream.tasks),
      .phases_done = 0,
      .state = init_state(config.pipeline.expanded_dim, config.pipeline.lambda),
      .bank = {},
      .column_tasks = {},
      .accuracy = AccuracyMatrix(config.stream.tasks),
      .routing = {},
      .retained_training = {},
  };
  if (config.router.generalist_route) {
    const auto generic = source.generic_prompts();
    if (generic.empty()) throw std::invalid_argument("generalist route enabled but no generic prompts available");
    Matrix features = expanded_features(model, generic);
    run.state = grow_label_space(std::move(run.state), 1);
    run.column_tasks.push_back(kOriginTask);
    run.state = update(std::move(run.state),
                       ExpandedBatch::one_hot(std::move(features), run.state.task_count() - 1, run.state.task_count()),
                       config.router.chunk_rows);
  }
  return run;
}

void continue_continual(ContinualRun& run, const Model& model, TaskSource& source, const RunConfig& config,
                        const PhaseCallback& on_phase) {
  const Index k = static_cast<Index>(run.phase_tasks.size());
  for (Index phase = run.phases_done; phase < k; ++phase) {
    const TaskId task = run.phase_tasks[static_cast<std::size_t>(phase)];
    {
      // Training data of this phase lives only inside this scope.
      TrainingLease lease = source.lease_training(task);
      run.bank.add(train_adapter(model.encoder, lease.train(), task_hyper(config.adapter, task), task));

      const std::vector<Prompt> prompts = prompts_of(lease.router_fit());
      Matrix features = expanded_features(model, prompts);
      run.state = grow_label_space(std::move(run.state), 1);
      run.column_tasks.push_back(task);
      const Index column = run.state.task_count() - 1;
      run.state = update(std::move(run.state),
                         ExpandedBatch::one_hot(std::move(features), column, run.state.task_count()),
                         config.router.chunk_rows);
      run.retained_training.push_back(source.live_leases());
    }

    const RouterSnapshot router = run.snapshot();
    std::vector<double> routing;
    for (Index i = 0; i <= phase; ++i) {
      const TaskId seen = run.phase_tasks[static_cast<std::size_t>(i)];
      const auto eval = source.eval_split(seen);
      const TaskEvaluation result =
          evaluate_task(model, router, run.bank, seen, eval, inference_options(config, eval));
      run.accuracy.set(i, phase, result.exact_match);
      routing.push_back(result.routing_accuracy);
    }
    run.routing.push_phase(std::move(routing));
    run.phases_done = phase + 1;
    if (on_phase) on_phase(run);
  }
}

ContinualRun run_continual(const Model& model, TaskSource& source, const RunConfig& config,
                           const PhaseCallback& on_phase) {
  ContinualRun run = begin_continual(model, source, config);
  continue_continual(run, model, source, config, on_phase);
  return run;
}

// ---- baselines -------------------------------------------------------------

namespace {

// E -> hidden (ReLU) -> K logits; the output layer grows one unit per task.
struct Perceptron {
  Matrix w1;
  RowVector b1;
  Matrix w2;
  RowVector b2;

  Matrix hidden(const Matrix& x) const {
    Matrix h = x * w1;
    h.rowwise() += b1;
    return h.cwiseMax(0.0);
  }
  Matrix logits(const Matrix& x) const {
    Matrix z = hidden(x) * w2;
    z.rowwise() += b2;
    return z;
  }
};

void train_perceptron(Perceptron& net, const Matrix& x, Index label, Index epochs, double lr) {
  const auto n = static_cast<double>(x.rows());
  for (Index e = 0; e < epochs; ++e) {
    Matrix pre = x * net.w1;
    pre.rowwise() += net.b1;
    const Matrix h = pre.cwiseMax(0.0);
    Matrix z = h * net.w2;
    z.rowwise() += net.b2;
    Matrix grad_z(z.rows(), z.cols());
    for (Index i = 0; i < z.rows(); ++i) {
      const RowVector ez = (z.row(i).array() - z.row(i).maxCoeff()).exp().matrix();
      grad_z.row(i) = ez / ez.sum();
      grad_z(i, label) -= 1.0;
    }
    grad_z /= n;
    const Matrix grad_w2 = h.transpose() * grad_z;
    const RowVector grad_b2 = grad_z.colwise().sum();
    const Matrix grad_h = (grad_z * net.w2.transpose()).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
    const Matrix grad_w1 = x.transpose() * grad_h;
    const RowVector grad_b1 = grad_h.colwise().sum();
    net.w2 -= lr * grad_w2;
    net.b2 -= lr * grad_b2;
    net.w1 -= lr * grad_w1;
    net.b1 -= lr * grad_b1;
  }
}

}  // namespace

RoutingAccuracyTrace run_bp_router_baseline(const Model& model, TaskSource& source, const RunConfig& config) {
  config.validate();
  const std::vector<TaskId> order = config.order.resolve(config.stream.tasks);
  const Index dim = model.pipeline.out_dim();
  const Index hidden = config.baselines.bp_hidden;
  Rng rng(derive_seed(config.baselines.bp_seed, seed_tag::kBpRouter));
  Perceptron net;
  net.w1.resize(dim, hidden);
  for (Index i = 0; i < dim; ++i) {
    for (Index j = 0; j < hidden; ++j) net.w1(i, j) = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  }
  net.b1 = RowVector::Zero(hidden);
  net.w2.resize(hidden, 0);
  net.b2.resize(0);

  RoutingAccuracyTrace trace;
  for (std::size_t phase = 0; phase < order.size(); ++phase) {
    const TaskId task = order[phase];
    {
      TrainingLease lease = source.lease_training(task);
      const Matrix x = expanded_features(model, prompts_of(lease.router_fit()));
      const Index k = net.w2.cols() + 1;
      net.w2.conservativeResize(Eigen::NoChange, k);
      for (Index j = 0; j < hidden; ++j) net.w2(j, k - 1) = rng.normal(0.0, 0.1 / std::sqrt(static_cast<double>(hidden)));
      net.b2.conservativeResize(k);
      net.b2[k - 1] = 0.0;
      train_perceptron(net, x, k - 1, config.baselines.bp_epochs, config.baselines.bp_learning_rate);
    }
    std::vector<double> accuracies;
    for (std::size_t i = 0; i <= phase; ++i) {
      const Matrix x = expanded_features(model, prompts_of(source.eval_split(order[i])));
      const Matrix z = net.logits(x);
      Index correct = 0;
      for (Index r = 0; r < z.rows(); ++r) {
        if (argmax_lowest(z.row(r).transpose()) == static_cast<Index>(i)) ++correct;
      }
      accuracies.push_back(static_cast<double>(correct) / static_cast<double>(z.rows()));
    }
    trace.push_phase(std::move(accuracies));
  }
  return trace;
}

AccuracyMatrix run_single_adapter_baseline(const Model& model, TaskSource& source, const RunConfig& config) {
  config.validate();
  const std::vector<TaskId> order = config.order.resolve(config.stream.tasks);
  AccuracyMatrix accuracy(static_cast<Index>(order.size()));
  std::optional<LowRankAdapter> shared;
  for (std::size_t phase = 0; phase < order.size(); ++phase) {
    const TaskId task = order[phase];
    const AdapterHyper hyper = task_hyper(config.adapter, task);
    {
      TrainingLease lease = source.lease_training(task);
      if (!shared) {
        shared = train_adapter(model.encoder, lease.train(), hyper, task);
      } else {
        shared = continue_training(model.encoder, std::move(*shared), lease.train(), hyper);
      }
    }
    for (std::size_t i = 0; i <= phase; ++i) {
      const auto eval = source.eval_split(order[i]);
      const InferenceOptions options = inference_options(config, eval);
      Index exact = 0;
      for (const auto& ex : eval) {
        if (generate(model.encoder, &*shared, ex.prompt, options.max_len) == ex.answer) ++exact;
      }
      accuracy.set(static_cast<Index>(i), static_cast<Index>(phase),
                   static_cast<double>(exact) / static_cast<double>(eval.size()));
    }
  }
  return accuracy;
}

double stream_separability(const Model& model, const TaskStream& stream, bool expanded) {
  std::vector<Matrix> per_task;
  for (const auto& task : stream.tasks) {
    std::vector<Prompt> prompts = prompts_of(task.train);
    for (const auto& ex : task.router_fit) prompts.push_back(ex.prompt);
    Matrix pooled = parallel::pooled_features(model.encoder, prompts);
    per_task.push_back(expanded ? parallel::expand_rows(model.pipeline, pooled) : std::move(pooled));
  }
  return separability_probe(per_task, nullptr);
}

SweepResult run_sweep(const TaskStream& stream, const RunConfig& base, std::span<const Index> split_layers,
                      std::span<const Index> expanded_dims) {
  SweepResult result;
  result.split_layers.assign(split_layers.begin(), split_layers.end());
  result.expanded_dims.assign(expanded_dims.begin(), expanded_dims.end());
  for (Index split : split_layers) {
    for (Index dim : expanded_dims) {
      RunConfig config = base;
      config.encoder.split_layer = split;
      config.pipeline.expanded_dim = dim;
      const Model model = make_model(config);
      StreamSource source(stream);
      const ContinualRun run = run_continual(model, source, config);
      SweepCell cell{split, dim, compute_op(run.accuracy), std::nullopt};
      if (run.accuracy.size() >= 2) cell.bwt = compute_bwt(run.accuracy);
      result.cells.push_back(cell);
    }
  }
  return result;
}

}  // namespace anyssr
