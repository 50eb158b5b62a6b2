#pragma once

// Self-check of the router identities on random instances: joint solve vs
// recursive update, the two weight-update forms, and chunk-size invariance.

#include <cstdint>

#include "anyssr/linalg.hpp"

namespace anyssr {

struct EquivalenceReport {
  Index instances = 0;
  double joint_vs_recursive = 0.0;  // max |W_update - W_joint|
  double direct_vs_recursive = 0.0; // max |W_direct - W_update|
  double chunking = 0.0;            // max |W_chunk(c) - W_chunk(64)| over c in {1, 7, n}
  double symmetry = 0.0;            // max |R - Rᵀ| after every task
  bool positive_definite = true;

  bool passes(double tolerance = 1e-9) const {
    return joint_vs_recursive <= tolerance && direct_vs_recursive <= tolerance && chunking <= tolerance &&
           symmetry <= tolerance && positive_definite;
  }
};

/// Random instances with E in {8, 32, 64}, 2..5 tasks, 1..100 Gaussian rows
/// per task and lambda in {0.1, 1, 10}.
EquivalenceReport run_equivalence_suite(std::uint64_t seed, Index instances = 100);

}  // namespace anyssr
