// Serial reference vs OpenMP kernels on a toy-sized eval batch.
#include <benchmark/benchmark.h>

#include "anyssr/harness.hpp"
#include "anyssr/kernels.hpp"
#include "anyssr/rng.hpp"

namespace {

using namespace anyssr;

struct Fixture {
  RunConfig config;
  Model model;
  TaskStream stream;
  std::vector<Prompt> prompts;
  AdapterBank bank;
  RouterSnapshot router;

  Fixture() : model(make_model(config)), stream(generate_task_stream(config.stream, config.encoder.vocab, 3)) {
    for (const auto& task : stream.tasks) {
      for (const auto& ex : task.eval) prompts.push_back(ex.prompt);
    }
    // Untrained adapters and a random router: the work per sample is what matters here.
    for (const auto& task : stream.tasks) {
      bank.add(LowRankAdapter::create(config.encoder, config.adapter.rank, task.id, 11 + task.id));
      router.column_tasks.push_back(task.id);
    }
    Rng rng(17);
    router.weights = Matrix(config.pipeline.expanded_dim, static_cast<Index>(stream.tasks.size()));
    for (Index i = 0; i < router.weights.size(); ++i) router.weights.data()[i] = rng.normal();
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_PooledSerial(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(serial::pooled_features(f.model.encoder, f.prompts));
}

void BM_PooledParallel(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(parallel::pooled_features(f.model.encoder, f.prompts));
}

void BM_ExpandSerial(benchmark::State& state) {
  const auto& f = fixture();
  const Matrix pooled = serial::pooled_features(f.model.encoder, f.prompts);
  for (auto _ : state) benchmark::DoNotOptimize(serial::expand_rows(f.model.pipeline, pooled));
}

void BM_ExpandParallel(benchmark::State& state) {
  const auto& f = fixture();
  const Matrix pooled = serial::pooled_features(f.model.encoder, f.prompts);
  for (auto _ : state) benchmark::DoNotOptimize(parallel::expand_rows(f.model.pipeline, pooled));
}

void BM_InferenceSerial(benchmark::State& state) {
  const auto& f = fixture();
  const InferenceOptions opts{};
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        serial::run_inference_batch(f.model.encoder, f.model.pipeline, f.router, f.bank, f.prompts, opts));
  }
}

void BM_InferenceParallel(benchmark::State& state) {
  const auto& f = fixture();
  const InferenceOptions opts{};
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        parallel::run_inference_batch(f.model.encoder, f.model.pipeline, f.router, f.bank, f.prompts, opts));
  }
}

BENCHMARK(BM_PooledSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PooledParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExpandSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExpandParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_InferenceSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_InferenceParallel)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
