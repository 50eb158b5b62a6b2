#include "anyssr/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "anyssr/rng.hpp"
#include "anyssr/router.hpp"

namespace anyssr {

namespace {

constexpr double kNormEps = 1e-5;

double gelu(double z) { return 0.5 * z * (1.0 + std::erf(z / std::numbers::sqrt2)); }

double gelu_grad(double z) {
  const double cdf = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + z * pdf;
}

// Row-wise layer normalization without gain or bias.
Matrix layer_norm(const Matrix& x, Vector& inv_std) {
  Matrix y(x.rows(), x.cols());
  inv_std.resize(x.rows());
  const double width = static_cast<double>(x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).sum() / width;
    const auto centered = x.row(i).array() - mean;
    const double var = centered.square().sum() / width;
    inv_std[i] = 1.0 / std::sqrt(var + kNormEps);
    y.row(i) = centered * inv_std[i];
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& normalized, const Vector& inv_std, const Matrix& grad_out) {
  Matrix grad_in(grad_out.rows(), grad_out.cols());
  const double width = static_cast<double>(grad_out.cols());
  for (Index i = 0; i < grad_out.rows(); ++i) {
    const double mean_g = grad_out.row(i).sum() / width;
    const double mean_gy = grad_out.row(i).dot(normalized.row(i)) / width;
    grad_in.row(i) = inv_std[i] * (grad_out.row(i).array() - mean_g - normalized.row(i).array() * mean_gy);
  }
  return grad_in;
}

Matrix gaussian(Rng& rng, Index rows, Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
  }
  return m;
}

RowVector gaussian_row(Rng& rng, Index cols, double stddev) {
  RowVector v(cols);
  for (Index j = 0; j < cols; ++j) v[j] = rng.normal(0.0, stddev);
  return v;
}

EncoderWeights draw_weights(const EncoderConfig& c) {
  Rng rng(derive_seed(c.seed, seed_tag::kEncoder));
  const double d = static_cast<double>(c.hidden);
  const double f = static_cast<double>(c.ffn_hidden);
  EncoderWeights w;
  w.embedding = gaussian(rng, c.vocab, c.hidden, 1.0);
  for (Index l = 0; l < c.total_layers; ++l) {
    BlockWeights b;
    b.w_in = gaussian(rng, c.hidden, c.ffn_hidden, 1.0 / std::sqrt(d));
    b.b_in = gaussian_row(rng, c.ffn_hidden, 0.1);
    b.w_out = gaussian(rng, c.ffn_hidden, c.hidden, 0.5 / std::sqrt(f));
    b.b_out = RowVector::Zero(c.hidden);
    w.blocks.push_back(std::move(b));
  }
  w.head = gaussian(rng, c.hidden, c.vocab, 2.0 / std::sqrt(d));
  w.head_bias = RowVector::Zero(c.vocab);
  return w;
}

void check_weights(const EncoderConfig& c, const EncoderWeights& w) {
  bool ok = w.embedding.rows() == c.vocab && w.embedding.cols() == c.hidden &&
            static_cast<Index>(w.blocks.size()) == c.total_layers && w.head.rows() == c.hidden &&
            w.head.cols() == c.vocab && w.head_bias.size() == c.vocab;
  for (const auto& b : w.blocks) {
    ok = ok && b.w_in.rows() == c.hidden && b.w_in.cols() == c.ffn_hidden && b.b_in.size() == c.ffn_hidden &&
         b.w_out.rows() == c.ffn_hidden && b.w_out.cols() == c.hidden && b.b_out.size() == c.hidden;
  }
  if (!ok) throw std::invalid_argument("encoder weights do not match config shapes");
}

// One block without adapter; used by the lower stack.
Matrix plain_block(const BlockWeights& b, const Matrix& x) {
  Vector inv_std;
  const Matrix u = layer_norm(x, inv_std);
  Matrix z = u * b.w_in;
  z.rowwise() += b.b_in;
  const Matrix a = z.unaryExpr(&gelu);
  Matrix out = a * b.w_out;
  out.rowwise() += b.b_out;
  return x + out;
}

void append_matrix(std::vector<std::uint8_t>& out, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const auto bits = std::bit_cast<std::uint64_t>(m(i, j));
      for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
    }
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (hidden < 1 || ffn_hidden < 1 || vocab < 2) throw std::invalid_argument("encoder: sizes must be positive");
  if (split_layer < 1 || split_layer >= total_layers) {
    std::ostringstream msg;
    msg << "encoder: split layer must satisfy 1 <= split < total (split=" << split_layer
        << ", total=" << total_layers << ")";
    throw std::invalid_argument(msg.str());
  }
}

// ---- adapters --------------------------------------------------------------

LowRankAdapter LowRankAdapter::create(const EncoderConfig& config, Index rank, TaskId task, std::uint64_t seed) {
  config.validate();
  if (rank < 1) throw std::invalid_argument("adapter: rank must be >= 1");
  Rng rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(rank));
  std::vector<LayerFactors> layers;
  for (Index l = config.split_layer; l < config.total_layers; ++l) {
    LayerFactors f;
    f[0].b = Matrix::Zero(config.hidden, rank);
    f[0].a = gaussian(rng, rank, config.ffn_hidden, stddev);
    f[1].b = Matrix::Zero(config.ffn_hidden, rank);
    f[1].a = gaussian(rng, rank, config.hidden, stddev);
    layers.push_back(std::move(f));
  }
  return LowRankAdapter(task, rank, config.split_layer, std::move(layers));
}

LowRankAdapter::LowRankAdapter(TaskId task, Index rank, Index first_layer, std::vector<LayerFactors> layers)
    : task_(task), rank_(rank), first_layer_(first_layer), layers_(std::move(layers)) {
  if (rank_ < 1) throw std::invalid_argument("adapter: rank must be >= 1");
  for (const auto& lf : layers_) {
    for (const auto& f : lf) {
      if (f.b.cols() != rank_ || f.a.rows() != rank_) throw std::invalid_argument("adapter: factor rank mismatch");
    }
  }
}

const LowRankFactors& LowRankAdapter::factors(Index layer, AffineSlot slot) const {
  if (!adapts(layer)) throw std::out_of_range("adapter: layer " + std::to_string(layer) + " is not adapted");
  return layers_[static_cast<std::size_t>(layer - first_layer_)][static_cast<std::size_t>(slot)];
}

LowRankFactors& LowRankAdapter::factors(Index layer, AffineSlot slot) {
  if (!adapts(layer)) throw std::out_of_range("adapter: layer " + std::to_string(layer) + " is not adapted");
  return layers_[static_cast<std::size_t>(layer - first_layer_)][static_cast<std::size_t>(slot)];
}

bool LowRankAdapter::operator==(const LowRankAdapter& other) const {
  if (task_ != other.task_ || rank_ != other.rank_ || first_layer_ != other.first_layer_ ||
      layers_.size() != other.layers_.size()) {
    return false;
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    for (std::size_t s = 0; s < 2; ++s) {
      const auto& x = layers_[l][s];
      const auto& y = other.layers_[l][s];
      if (x.b.rows() != y.b.rows() || x.b.cols() != y.b.cols() || x.a.rows() != y.a.rows() ||
          x.a.cols() != y.a.cols()) {
        return false;
      }
      if (std::memcmp(x.b.data(), y.b.data(), sizeof(double) * static_cast<std::size_t>(x.b.size())) != 0 ||
          std::memcmp(x.a.data(), y.a.data(), sizeof(double) * static_cast<std::size_t>(x.a.size())) != 0) {
        return false;
      }
    }
  }
  return true;
}

Matrix adapter_delta(const LowRankAdapter& adapter, Index layer, AffineSlot slot) {
  const auto& f = adapter.factors(layer, slot);
  return f.b * f.a;
}

void AdapterBank::add(LowRankAdapter adapter) {
  if (contains(adapter.task())) {
    throw std::invalid_argument("adapter bank: task " + std::to_string(adapter.task()) + " already present");
  }
  adapters_.push_back(std::move(adapter));
}

const LowRankAdapter* AdapterBank::find(TaskId task) const {
  for (const auto& a : adapters_) {
    if (a.task() == task) return &a;
  }
  return nullptr;
}

const LowRankAdapter& AdapterBank::at(TaskId task) const {
  const auto* a = find(task);
  if (!a) throw std::out_of_range("adapter bank: no adapter for task " + std::to_string(task));
  return *a;
}

// ---- encoder ---------------------------------------------------------------

FrozenEncoder::FrozenEncoder(EncoderConfig config) : config_(config) {
  config_.validate();
  weights_ = draw_weights(config_);
}

FrozenEncoder::FrozenEncoder(EncoderConfig config, EncoderWeights weights)
    : config_(config), weights_(std::move(weights)) {
  config_.validate();
  check_weights(config_, weights_);
}

Matrix FrozenEncoder::forward_lower(std::span<const Token> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("forward_lower: empty token sequence");
  Matrix x(static_cast<Index>(tokens.size()), config_.hidden);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const Token tok = tokens[t];
    if (tok < 0 || tok >= config_.vocab) {
      throw std::invalid_argument("forward_lower: token " + std::to_string(tok) + " outside vocabulary");
    }
    x.row(static_cast<Index>(t)) = weights_.embedding.row(tok);
  }
  for (Index l = 0; l < config_.split_layer; ++l) x = plain_block(weights_.blocks[static_cast<std::size_t>(l)], x);
  return x;
}

UpperTrace FrozenEncoder::forward_upper_traced(const LowRankAdapter* adapter, const Matrix& lower) const {
  if (lower.cols() != config_.hidden) {
    throw std::invalid_argument("forward_upper: feature width " + std::to_string(lower.cols()) +
                                " != hidden " + std::to_string(config_.hidden));
  }
  if (adapter && (adapter->first_layer() != config_.split_layer ||
                  adapter->layer_count() != config_.adapted_layers())) {
    throw std::invalid_argument("forward_upper: adapter layout does not match encoder split");
  }
  UpperTrace trace;
  Matrix x = lower;
  for (Index l = config_.split_layer; l < config_.total_layers; ++l) {
    const BlockWeights& w = weights_.blocks[static_cast<std::size_t>(l)];
    BlockTrace bt;
    bt.input = x;
    bt.normalized = layer_norm(x, bt.inv_std);
    bt.pre_act = bt.normalized * w.w_in;
    if (adapter) {
      const auto& f = adapter->factors(l, AffineSlot::kIn);
      bt.low_in = bt.normalized * f.b;
      bt.pre_act.noalias() += bt.low_in * f.a;
    }
    bt.pre_act.rowwise() += w.b_in;
    bt.activated = bt.pre_act.unaryExpr(&gelu);
    Matrix out = bt.activated * w.w_out;
    if (adapter) {
      const auto& f = adapter->factors(l, AffineSlot::kOut);
      bt.low_out = bt.activated * f.b;
      out.noalias() += bt.low_out * f.a;
    }
    out.rowwise() += w.b_out;
    x += out;
    trace.blocks.push_back(std::move(bt));
  }
  trace.final_input = x;
  trace.final_normalized = layer_norm(x, trace.final_inv_std);
  trace.logits = trace.final_normalized * weights_.head;
  trace.logits.rowwise() += weights_.head_bias;
  return trace;
}

Matrix FrozenEncoder::forward_upper(const LowRankAdapter* adapter, const Matrix& lower) const {
  return forward_upper_traced(adapter, lower).logits;
}

std::vector<std::uint8_t> FrozenEncoder::serialize_weights() const {
  std::vector<std::uint8_t> out;
  append_matrix(out, weights_.embedding);
  for (const auto& b : weights_.blocks) {
    append_matrix(out, b.w_in);
    append_matrix(out, b.b_in);
    append_matrix(out, b.w_out);
    append_matrix(out, b.b_out);
  }
  append_matrix(out, weights_.head);
  append_matrix(out, weights_.head_bias);
  return out;
}

std::vector<Token> generate_with(const FrozenEncoder& encoder, const AdapterSelector& select,
                                 std::span<const Token> prompt, Index max_len) {
  if (max_len < 1) throw std::invalid_argument("generate: max_len must be >= 1");
  std::vector<Token> sequence(prompt.begin(), prompt.end());
  std::vector<Token> continuation;
  while (static_cast<Index>(continuation.size()) < max_len) {
    const LowRankAdapter* adapter = select(sequence);
    const Matrix logits = encoder.forward_upper(adapter, encoder.forward_lower(sequence));
    const Token next = static_cast<Token>(argmax_lowest(logits.row(logits.rows() - 1).transpose()));
    if (next == kEosToken) break;
    continuation.push_back(next);
    sequence.push_back(next);
  }
  return continuation;
}

std::vector<Token> generate(const FrozenEncoder& encoder, const LowRankAdapter* adapter,
                            std::span<const Token> prompt, Index max_len) {
  return generate_with(
      encoder, [adapter](std::span<const Token>) { return adapter; }, prompt, max_len);
}

// ---- training --------------------------------------------------------------

TargetRows collect_target_rows(const FrozenEncoder& encoder, std::span<const TrainingExample> data) {
  std::vector<Token> targets;
  std::vector<Matrix> pieces;
  Index total = 0;
  for (const auto& ex : data) {
    if (ex.prompt.empty()) throw std::invalid_argument("training example with empty prompt");
    // Input: prompt + answer; targets: answer + eos, aligned to the last
    // prompt position onwards.
    std::vector<Token> input = ex.prompt;
    input.insert(input.end(), ex.answer.begin(), ex.answer.end());
    const Matrix lower = encoder.forward_lower(input);
    const Index first = static_cast<Index>(ex.prompt.size()) - 1;
    const Index count = static_cast<Index>(ex.answer.size()) + 1;
    pieces.push_back(lower.middleRows(first, count));
    total += count;
    targets.insert(targets.end(), ex.answer.begin(), ex.answer.end());
    targets.push_back(kEosToken);
  }
  TargetRows rows;
  rows.lower.resize(total, encoder.config().hidden);
  Index at = 0;
  for (const auto& p : pieces) {
    rows.lower.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  rows.targets = std::move(targets);
  return rows;
}

double adapter_loss(const FrozenEncoder& encoder, const LowRankAdapter& adapter, const TargetRows& rows,
                    AdapterGradient* gradient) {
  const Index m = rows.lower.rows();
  if (m == 0 || static_cast<Index>(rows.targets.size()) != m) {
    throw std::invalid_argument("adapter_loss: empty or inconsistent target rows");
  }
  const EncoderConfig& cfg = encoder.config();
  const EncoderWeights& w = encoder.weights();
  const UpperTrace trace = encoder.forward_upper_traced(&adapter, rows.lower);

  // Softmax cross-entropy, averaged over rows.
  Matrix grad_logits(m, cfg.vocab);
  double loss = 0.0;
  for (Index i = 0; i < m; ++i) {
    const double top = trace.logits.row(i).maxCoeff();
    const RowVector e = (trace.logits.row(i).array() - top).exp().matrix();
    const double z = e.sum();
    const Token target = rows.targets[static_cast<std::size_t>(i)];
    loss += std::log(z) - (trace.logits(i, target) - top);
    grad_logits.row(i) = e / z;
    grad_logits(i, target) -= 1.0;
  }
  loss /= static_cast<double>(m);
  if (!gradient) return loss;
  grad_logits /= static_cast<double>(m);

  gradient->layers.assign(static_cast<std::size_t>(cfg.adapted_layers()), {});
  Matrix grad_x =
      layer_norm_backward(trace.final_normalized, trace.final_inv_std, grad_logits * w.head.transpose());
  for (Index l = cfg.total_layers - 1; l >= cfg.split_layer; --l) {
    const std::size_t local = static_cast<std::size_t>(l - cfg.split_layer);
    const BlockTrace& bt = trace.blocks[local];
    const BlockWeights& bw = w.blocks[static_cast<std::size_t>(l)];
    const auto& f_in = adapter.factors(l, AffineSlot::kIn);
    const auto& f_out = adapter.factors(l, AffineSlot::kOut);
    auto& g = gradient->layers[local];

    // out = a W_out + (a B_out) A_out + b_out; the residual passes grad_x through.
    const Matrix& grad_out = grad_x;
    g[1].a = bt.low_out.transpose() * grad_out;
    const Matrix grad_low_out = grad_out * f_out.a.transpose();
    g[1].b = bt.activated.transpose() * grad_low_out;
    const Matrix grad_act = grad_out * bw.w_out.transpose() + grad_low_out * f_out.b.transpose();

    const Matrix grad_pre = grad_act.cwiseProduct(bt.pre_act.unaryExpr(&gelu_grad));
    g[0].a = bt.low_in.transpose() * grad_pre;
    const Matrix grad_low_in = grad_pre * f_in.a.transpose();
    g[0].b = bt.normalized.transpose() * grad_low_in;
    const Matrix grad_norm = grad_pre * bw.w_in.transpose() + grad_low_in * f_in.b.transpose();

    grad_x += layer_norm_backward(bt.normalized, bt.inv_std, grad_norm);
  }
  return loss;
}

namespace {

struct AdamSlot {
  Matrix m;
  Matrix v;
};

void adam_step(Matrix& param, const Matrix& grad, AdamSlot& slot, double lr, Index step) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  if (slot.m.size() == 0) {
    slot.m = Matrix::Zero(param.rows(), param.cols());
    slot.v = Matrix::Zero(param.rows(), param.cols());
  }
  slot.m = kBeta1 * slot.m + (1.0 - kBeta1) * grad;
  slot.v = kBeta2 * slot.v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
  param.array() -= lr * (slot.m.array() / c1) / ((slot.v.array() / c2).sqrt() + kEps);
}

TargetRows select_rows(const TargetRows& all, std::span<const Index> order) {
  TargetRows out;
  out.lower.resize(static_cast<Index>(order.size()), all.lower.cols());
  out.targets.resize(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.lower.row(static_cast<Index>(i)) = all.lower.row(order[i]);
    out.targets[i] = all.targets[static_cast<std::size_t>(order[i])];
  }
  return out;
}

}  // namespace

LowRankAdapter continue_training(const FrozenEncoder& encoder, LowRankAdapter adapter,
                                 std::span<const TrainingExample> data, const AdapterHyper& hyper,
                                 std::vector<double>* loss_curve) {
  if (data.empty()) throw std::invalid_argument("train_adapter: empty dataset");
  if (hyper.epochs < 0 || hyper.batch_size < 1 || !(hyper.learning_rate > 0.0)) {
    throw std::invalid_argument("train_adapter: invalid hyperparameters");
  }
  const TargetRows rows = collect_target_rows(encoder, data);
  const Index m = rows.lower.rows();
  std::vector<Index> order(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;

  Rng shuffle(derive_seed(hyper.seed, seed_tag::kAdapterShuffle));
  std::vector<std::array<AdamSlot, 4>> slots(adapter.layers().size());
  Index step = 0;
  AdapterGradient grad;
  for (Index epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_index(i))]);
    }
    for (Index start = 0; start < m; start += hyper.batch_size) {
      const Index count = std::min(hyper.batch_size, m - start);
      const TargetRows batch = select_rows(rows, std::span<const Index>(order).subspan(
                                                     static_cast<std::size_t>(start), static_cast<std::size_t>(count)));
      adapter_loss(encoder, adapter, batch, &grad);
      ++step;
      for (std::size_t l = 0; l < adapter.layers().size(); ++l) {
        for (std::size_t s = 0; s < 2; ++s) {
          adam_step(adapter.layers()[l][s].b, grad.layers[l][s].b, slots[l][2 * s], hyper.learning_rate, step);
          adam_step(adapter.layers()[l][s].a, grad.layers[l][s].a, slots[l][2 * s + 1], hyper.learning_rate, step);
        }
      }
    }
    if (loss_curve) loss_curve->push_back(adapter_loss(encoder, adapter, rows));
  }
  return adapter;
}

LowRankAdapter train_adapter(const FrozenEncoder& encoder, std::span<const TrainingExample> data,
                             const AdapterHyper& hyper, TaskId task, std::vector<double>* loss_curve) {
  if (data.empty()) throw std::invalid_argument("train_adapter: empty dataset");
  if (hyper.rank < 1) throw std::invalid_argument("train_adapter: rank must be >= 1");
  LowRankAdapter adapter =
      LowRankAdapter::create(encoder.config(), hyper.rank, task, derive_seed(hyper.seed, seed_tag::kAdapterInit));
  return continue_training(encoder, std::move(adapter), data, hyper, loss_curve);
}

}  // namespace anyssr
