#pragma once

// Desk-scale layered encoder. Every block is a position-wise residual
// feed-forward unit:
//
//   x' = x + gelu(LN(x) W_in + b_in) W_out + b_out
//
// Layers [0, split) form the frozen feature extractor used by the router;
// layers [split, total) stay frozen as well but accept a per-task low-rank
// adapter on both affine maps. A final LN and linear head produce logits.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "anyssr/linalg.hpp"

namespace anyssr {

using Token = std::int32_t;
using TaskId = std::int32_t;
using Prompt = std::vector<Token>;

inline constexpr Token kEosToken = 0;

struct EncoderConfig {
  Index hidden = 32;
  Index ffn_hidden = 64;
  Index total_layers = 4;
  Index split_layer = 2;
  Index vocab = 64;
  std::uint64_t seed = 1;

  Index adapted_layers() const { return total_layers - split_layer; }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct BlockWeights {
  Matrix w_in;      // hidden x ffn
  RowVector b_in;   // ffn
  Matrix w_out;     // ffn x hidden
  RowVector b_out;  // hidden
};

struct EncoderWeights {
  Matrix embedding;  // vocab x hidden
  std::vector<BlockWeights> blocks;
  Matrix head;          // hidden x vocab
  RowVector head_bias;  // vocab
};

/// The two affine maps of a block that carry adapters.
enum class AffineSlot : std::size_t { kIn = 0, kOut = 1 };

/// B (d_in x r) and A (r x d_out); ΔW = B A.
struct LowRankFactors {
  Matrix b;
  Matrix a;
};

class LowRankAdapter {
public:
  using LayerFactors = std::array<LowRankFactors, 2>;

  /// B = 0 so the adapter starts neutral; A ~ N(0, 1/r) from `seed`.
  static LowRankAdapter create(const EncoderConfig& config, Index rank, TaskId task, std::uint64_t seed);

  /// Adapter from explicit factors (checkpoint loading, tests).
  LowRankAdapter(TaskId task, Index rank, Index first_layer, std::vector<LayerFactors> layers);

  TaskId task() const { return task_; }
  Index rank() const { return rank_; }
  Index first_layer() const { return first_layer_; }
  Index layer_count() const { return static_cast<Index>(layers_.size()); }
  bool adapts(Index layer) const { return layer >= first_layer_ && layer < first_layer_ + layer_count(); }

  /// Factors of an absolute layer index; throws std::out_of_range when the
  /// layer carries no adapter.
  const LowRankFactors& factors(Index layer, AffineSlot slot) const;
  LowRankFactors& factors(Index layer, AffineSlot slot);

  const std::vector<LayerFactors>& layers() const { return layers_; }
  std::vector<LayerFactors>& layers() { return layers_; }

  bool operator==(const LowRankAdapter& other) const;

private:
  TaskId task_;
  Index rank_;
  Index first_layer_;
  std::vector<LayerFactors> layers_;
};

/// ΔW = B A for one adapted affine map.
Matrix adapter_delta(const LowRankAdapter& adapter, Index layer, AffineSlot slot = AffineSlot::kIn);

/// Insertion-ordered task -> adapter map.
class AdapterBank {
public:
  /// Throws std::invalid_argument on a duplicate task id.
  void add(LowRankAdapter adapter);
  const LowRankAdapter* find(TaskId task) const;
  const LowRankAdapter& at(TaskId task) const;
  bool contains(TaskId task) const { return find(task) != nullptr; }
  std::size_t size() const { return adapters_.size(); }
  const std::vector<LowRankAdapter>& adapters() const { return adapters_; }
  bool operator==(const AdapterBank&) const = default;

private:
  std::vector<LowRankAdapter> adapters_;
};

/// Intermediate values of one adapted block, kept for backprop and tests.
struct BlockTrace {
  Matrix input;        // x
  Matrix normalized;   // LN(x)
  Vector inv_std;      // per row
  Matrix low_in;       // LN(x) B_in      (empty without adapter)
  Matrix pre_act;      // z = LN(x)(W_in + ΔW_in) + b_in
  Matrix activated;    // gelu(z)
  Matrix low_out;      // gelu(z) B_out  (empty without adapter)
};

struct UpperTrace {
  std::vector<BlockTrace> blocks;
  Matrix final_input;
  Matrix final_normalized;
  Vector final_inv_std;
  Matrix logits;
};

class FrozenEncoder {
public:
  /// Draws all weights from `config.seed`.
  explicit FrozenEncoder(EncoderConfig config);
  FrozenEncoder(EncoderConfig config, EncoderWeights weights);

  const EncoderConfig& config() const { return config_; }
  const EncoderWeights& weights() const { return weights_; }

  /// T x d features after the first `split_layer` blocks.
  Matrix forward_lower(std::span<const Token> tokens) const;

  /// T x V logits of the upper stack applied to lower features.
  Matrix forward_upper(const LowRankAdapter* adapter, const Matrix& lower) const;
  UpperTrace forward_upper_traced(const LowRankAdapter* adapter, const Matrix& lower) const;

  /// Little-endian dump of every frozen parameter, for byte comparisons.
  std::vector<std::uint8_t> serialize_weights() const;

private:
  EncoderConfig config_;
  EncoderWeights weights_;
};

/// Greedy decoding. Generation stops before emitting `kEosToken` or after
/// `max_len` tokens; the returned continuation never contains eos.
std::vector<Token> generate(const FrozenEncoder& encoder, const LowRankAdapter* adapter,
                            std::span<const Token> prompt, Index max_len);

/// Greedy decoding where the adapter is chosen again before every step from
/// the current sequence.
using AdapterSelector = std::function<const LowRankAdapter*(std::span<const Token> sequence)>;
std::vector<Token> generate_with(const FrozenEncoder& encoder, const AdapterSelector& select,
                                 std::span<const Token> prompt, Index max_len);

// ---- adapter training ----------------------------------------------------

/// Prompt followed by the expected answer. The model is trained to emit the
/// answer and then eos.
struct TrainingExample {
  std::vector<Token> prompt;
  std::vector<Token> answer;
};

struct AdapterHyper {
  Index rank = 4;
  double learning_rate = 0.01;
  Index epochs = 40;
  Index batch_size = 16;
  std::uint64_t seed = 7;
};

struct AdapterGradient {
  std::vector<LowRankAdapter::LayerFactors> layers;
};

/// Lower-layer rows and next-token targets of a dataset. Lower features
/// are frozen, so training computes them once.
struct TargetRows {
  Matrix lower;                // m x d
  std::vector<Token> targets;  // m
};

TargetRows collect_target_rows(const FrozenEncoder& encoder, std::span<const TrainingExample> data);

/// Mean next-token cross-entropy over all target rows; fills `gradient`
/// (w.r.t. every B and A) when non-null.
double adapter_loss(const FrozenEncoder& encoder, const LowRankAdapter& adapter, const TargetRows& rows,
                    AdapterGradient* gradient = nullptr);

/// Fresh adapter for `task` trained with Adam on B and A only.
LowRankAdapter train_adapter(const FrozenEncoder& encoder, std::span<const TrainingExample> data,
                             const AdapterHyper& hyper, TaskId task, std::vector<double>* loss_curve = nullptr);

/// Continues training an existing adapter (shared-adapter baseline).
LowRankAdapter continue_training(const FrozenEncoder& encoder, LowRankAdapter adapter,
                                 std::span<const TrainingExample> data, const AdapterHyper& hyper,
                                 std::vector<double>* loss_curve = nullptr);

}  // namespace anyssr
