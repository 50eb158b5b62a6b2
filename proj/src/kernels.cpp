#include "anyssr/kernels.hpp"

#include <exception>
#include <mutex>

#include <omp.h>

namespace anyssr {

namespace {

// Exceptions must not escape an OpenMP region; keep the first and rethrow.
class FirstError {
public:
  template <typename F>
  void run(F&& f) noexcept {
    try {
      f();
    } catch (...) {
      std::lock_guard lock(mutex_);
      if (!error_) error_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

private:
  std::mutex mutex_;
  std::exception_ptr error_;
};

}  // namespace

namespace serial {

Matrix pooled_features(const FrozenEncoder& encoder, std::span<const Prompt> prompts) {
  Matrix out(static_cast<Index>(prompts.size()), encoder.config().hidden);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    out.row(static_cast<Index>(i)) = mean_pool(encoder.forward_lower(prompts[i])).transpose();
  }
  return out;
}

Matrix expand_rows(const ExpansionPipeline& pipeline, const Matrix& pooled) {
  Matrix out(pooled.rows(), pipeline.out_dim());
  for (Index i = 0; i < pooled.rows(); ++i) {
    out.row(i) = pipeline.expand(pooled.row(i).transpose()).transpose();
  }
  return out;
}

std::vector<InferenceResult> run_inference_batch(const FrozenEncoder& encoder, const ExpansionPipeline& pipeline,
                                                 const RouterSnapshot& router, const AdapterBank& bank,
                                                 std::span<const Prompt> prompts, const InferenceOptions& options) {
  std::vector<InferenceResult> out;
  out.reserve(prompts.size());
  for (const auto& p : prompts) out.push_back(run_inference(encoder, pipeline, router, bank, p, options));
  return out;
}

}  // namespace serial

namespace parallel {

Matrix pooled_features(const FrozenEncoder& encoder, std::span<const Prompt> prompts) {
  const auto n = static_cast<std::int64_t>(prompts.size());
  Matrix out(n, encoder.config().hidden);
  FirstError errors;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    errors.run([&] {
      out.row(i) = mean_pool(encoder.forward_lower(prompts[static_cast<std::size_t>(i)])).transpose();
    });
  }
  errors.rethrow();
  return out;
}

Matrix expand_rows(const ExpansionPipeline& pipeline, const Matrix& pooled) {
  const std::int64_t n = pooled.rows();
  Matrix out(n, pipeline.out_dim());
  FirstError errors;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    errors.run([&] { out.row(i) = pipeline.expand(pooled.row(i).transpose()).transpose(); });
  }
  errors.rethrow();
  return out;
}

std::vector<InferenceResult> run_inference_batch(const FrozenEncoder& encoder, const ExpansionPipeline& pipeline,
                                                 const RouterSnapshot& router, const AdapterBank& bank,
                                                 std::span<const Prompt> prompts, const InferenceOptions& options) {
  const auto n = static_cast<std::int64_t>(prompts.size());
  std::vector<InferenceResult> out(prompts.size());
  FirstError errors;
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    errors.run([&] { out[k] = run_inference(encoder, pipeline, router, bank, prompts[k], options); });
  }
  errors.rethrow();
  return out;
}

}  // namespace parallel

}  // namespace anyssr
