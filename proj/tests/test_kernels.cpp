#include <doctest.h>

#include <omp.h>

#include "anyssr/harness.hpp"
#include "anyssr/kernels.hpp"

using namespace anyssr;

TEST_SUITE("kernels") {

TEST_CASE("parallel kernels equal the serial reference bitwise") {
  RunConfig c;
  c.stream.tasks = 3;
  c.adapter.epochs = 10;
  const Model model = make_model(c);
  const TaskStream stream = generate_task_stream(c.stream, c.encoder.vocab, c.stream_seed);
  StreamSource source(stream);
  const ContinualRun run = run_continual(model, source, c);

  std::vector<Prompt> prompts;
  for (const auto& t : stream.tasks)
    for (const auto& ex : t.eval) prompts.push_back(ex.prompt);

  const int saved = omp_get_max_threads();
  for (int threads : {1, 3, 4}) {
    omp_set_num_threads(threads);
    const Matrix ps = serial::pooled_features(model.encoder, prompts);
    const Matrix pp = parallel::pooled_features(model.encoder, prompts);
    CHECK(ps == pp);
    CHECK(serial::expand_rows(model.pipeline, ps) == parallel::expand_rows(model.pipeline, pp));
    CHECK(serial::expand_rows(model.pipeline, ps) == model.pipeline.expand_rows(ps));

    for (bool reroute : {false, true}) {
      InferenceOptions opts;
      opts.reroute_per_token = reroute;
      const auto rs = serial::run_inference_batch(model.encoder, model.pipeline, run.snapshot(), run.bank, prompts, opts);
      const auto rp =
          parallel::run_inference_batch(model.encoder, model.pipeline, run.snapshot(), run.bank, prompts, opts);
      REQUIRE(rs.size() == rp.size());
      for (std::size_t i = 0; i < rs.size(); ++i) {
        CHECK(rs[i].answer == rp[i].answer);
        CHECK(rs[i].routed_task == rp[i].routed_task);
        CHECK(rs[i].decision.probabilities == rp[i].decision.probabilities);
      }
    }
  }
  omp_set_num_threads(saved);
}

TEST_CASE("parallel kernels surface per-sample errors") {
  RunConfig c;
  const Model model = make_model(c);
  std::vector<Prompt> prompts{{1, 2, 3}, {1, 999}, {4, 5}};
  CHECK_THROWS_AS(parallel::pooled_features(model.encoder, prompts), std::invalid_argument);
  CHECK_THROWS_AS(serial::pooled_features(model.encoder, prompts), std::invalid_argument);
}

}  // TEST_SUITE
