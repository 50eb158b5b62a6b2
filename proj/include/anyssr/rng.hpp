#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace anyssr {

/// Seeded generator whose output is identical on every conforming platform.
///
/// std::mt19937_64 has a fully specified output sequence, but the standard
/// distributions do not, so uniform and normal draws are derived here
/// directly from the raw 64-bit stream.
class Rng {
public:
  static constexpr std::string_view kName = "mt19937_64+box-muller";
  static constexpr std::uint32_t kVersion = 1;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();

  /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t uniform_index(std::uint64_t n);

  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Mixes a base seed with a stream tag and index (splitmix64 finalizer), so
/// per-task and per-component generators are independent of each other and
/// of the order in which they are created.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index = 0);

namespace seed_tag {
inline constexpr std::uint64_t kEncoder = 0x656e63;
inline constexpr std::uint64_t kPipeline = 0x706970;
inline constexpr std::uint64_t kTaskData = 0x74736b;
inline constexpr std::uint64_t kTaskRule = 0x72756c;
inline constexpr std::uint64_t kAdapterInit = 0x616469;
inline constexpr std::uint64_t kAdapterShuffle = 0x616473;
inline constexpr std::uint64_t kBpRouter = 0x627072;
inline constexpr std::uint64_t kGeneralist = 0x67656e;
}  // namespace seed_tag

}  // namespace anyssr
