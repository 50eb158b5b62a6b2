#include "anyssr/verify.hpp"

#include <algorithm>
#include <vector>

#include "anyssr/rng.hpp"
#include "anyssr/router.hpp"

namespace anyssr {

EquivalenceReport run_equivalence_suite(std::uint64_t seed, Index instances) {
  constexpr Index kDims[] = {8, 32, 64};
  constexpr double kLambdas[] = {0.1, 1.0, 10.0};
  Rng rng(seed);
  EquivalenceReport report;
  report.instances = instances;
  for (Index inst = 0; inst < instances; ++inst) {
    const Index dim = kDims[rng.uniform_index(3)];
    const Index tasks = 2 + static_cast<Index>(rng.uniform_index(4));
    const double lambda = kLambdas[rng.uniform_index(3)];

    std::vector<ExpandedBatch> batches;
    Index total = 0;
    for (Index k = 0; k < tasks; ++k) {
      const Index rows = 1 + static_cast<Index>(rng.uniform_index(100));
      Matrix h(rows, dim);
      for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < dim; ++j) h(i, j) = rng.normal();
      }
      batches.push_back(ExpandedBatch::one_hot(std::move(h), k, k + 1));
      total += rows;
    }

    auto fold = [&](Index chunk, bool direct) {
      RlsState s = init_state(dim, lambda);
      for (const auto& b : batches) {
        s = grow_label_space(std::move(s), 1);
        s = direct ? update_weight_direct(std::move(s), b, chunk) : update(std::move(s), b, chunk);
        report.symmetry = std::max(report.symmetry, symmetry_residual(s.autocorrelation_inverse()));
        report.positive_definite = report.positive_definite && is_positive_definite(s.autocorrelation_inverse());
      }
      return s.weights();
    };

    const Matrix joint = solve_joint(batches, lambda, dim);
    const Matrix recursive = fold(kDefaultChunkRows, false);
    report.joint_vs_recursive = std::max(report.joint_vs_recursive, max_abs_diff(recursive, joint));
    report.direct_vs_recursive =
        std::max(report.direct_vs_recursive, max_abs_diff(fold(kDefaultChunkRows, true), recursive));
    for (Index chunk : {Index{1}, Index{7}, total}) {
      report.chunking = std::max(report.chunking, max_abs_diff(fold(chunk, false), recursive));
    }
  }
  return report;
}

}  // namespace anyssr
