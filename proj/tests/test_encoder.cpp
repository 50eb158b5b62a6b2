#include <doctest.h>

#include <Eigen/SVD>

#include "anyssr/encoder.hpp"
#include "grad_check.hpp"
#include "oracles.hpp"

using namespace anyssr;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.hidden = 8;
  c.ffn_hidden = 16;
  c.total_layers = 3;
  c.split_layer = 1;
  c.vocab = 20;
  c.seed = 5;
  return c;
}

LowRankAdapter randomized(const EncoderConfig& c, Index rank, std::uint64_t seed) {
  return gradcheck::random_adapter(c, rank, seed);
}

// Greedy decoding recomputed from scratch at every step.
std::vector<Token> decode_oracle(const FrozenEncoder& enc, const LowRankAdapter* adapter, std::vector<Token> seq,
                                 Index max_len) {
  std::vector<Token> out;
  for (Index step = 0; step < max_len; ++step) {
    const Matrix logits = enc.forward_upper(adapter, enc.forward_lower(seq));
    const Index last = logits.rows() - 1;
    Index best = 0;
    for (Index v = 1; v < logits.cols(); ++v)
      if (logits(last, v) > logits(last, best)) best = v;
    if (best == kEosToken) break;
    out.push_back(static_cast<Token>(best));
    seq.push_back(static_cast<Token>(best));
  }
  return out;
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("forward_lower shape and determinism") {
  const FrozenEncoder enc(small_config());
  const std::vector<Token> tokens{1, 4, 9, 19, 0};
  const Matrix a = enc.forward_lower(tokens);
  CHECK(a.rows() == 5);
  CHECK(a.cols() == 8);
  CHECK(a == enc.forward_lower(tokens));
  CHECK(FrozenEncoder(small_config()).serialize_weights() == enc.serialize_weights());
  const std::vector<Token> bad{1, 20};
  CHECK_THROWS_AS(enc.forward_lower(bad), std::invalid_argument);
  const std::vector<Token> negative{-1};
  CHECK_THROWS_AS(enc.forward_lower(negative), std::invalid_argument);
  CHECK(enc.forward_upper(nullptr, a).rows() == 5);
  CHECK(enc.forward_upper(nullptr, a).cols() == 20);
}

TEST_CASE("config validation") {
  EncoderConfig c = small_config();
  c.split_layer = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.hidden = 0;
  CHECK_THROWS_AS(FrozenEncoder{c}, std::invalid_argument);
}

TEST_CASE("adapter_delta examples") {
  const EncoderConfig c = small_config();
  const LowRankAdapter fresh = LowRankAdapter::create(c, 3, 0, 1);
  for (Index l = c.split_layer; l < c.total_layers; ++l) {
    CHECK(oracle::max_abs(adapter_delta(fresh, l, AffineSlot::kIn)) == 0.0);
    CHECK(oracle::max_abs(adapter_delta(fresh, l, AffineSlot::kOut)) == 0.0);
  }
  CHECK_THROWS_AS(adapter_delta(fresh, 0), std::out_of_range);
  CHECK_THROWS_AS(adapter_delta(fresh, 3), std::out_of_range);

  LowRankAdapter::LayerFactors f;
  f[0].b = Matrix{{1.0}, {0.0}};
  f[0].a = Matrix{{2.0, 3.0}};
  f[1].b = Matrix::Zero(2, 1);
  f[1].a = Matrix::Zero(1, 2);
  const LowRankAdapter outer(0, 1, 0, {f});
  CHECK(adapter_delta(outer, 0) == Matrix{{2.0, 3.0}, {0.0, 0.0}});

  CHECK_THROWS_AS(LowRankAdapter::create(c, 0, 0, 1), std::invalid_argument);
}

TEST_CASE("adapter rank never exceeds r") {
  EncoderConfig c = small_config();
  c.total_layers = 4;
  for (Index r : {Index{1}, Index{2}, Index{3}}) {
    const LowRankAdapter a = randomized(c, r, 10 + static_cast<std::uint64_t>(r));
    for (Index l = c.split_layer; l < c.total_layers; ++l)
      for (AffineSlot s : {AffineSlot::kIn, AffineSlot::kOut}) {
        const Eigen::JacobiSVD<Matrix> svd(adapter_delta(a, l, s));
        const Vector sv = svd.singularValues();
        for (Index i = r; i < sv.size(); ++i) CHECK(sv(i) < 1e-10);
        CHECK(sv(r - 1) > 1e-6);
      }
  }
}

TEST_CASE("zero-init adapter changes no output; random adapters do") {
  const EncoderConfig c = small_config();
  const FrozenEncoder enc(c);
  const Matrix lower = enc.forward_lower(std::vector<Token>{3, 7, 11});
  const LowRankAdapter fresh = LowRankAdapter::create(c, 4, 0, 9);
  CHECK(enc.forward_upper(&fresh, lower) == enc.forward_upper(nullptr, lower));
  const LowRankAdapter a = randomized(c, 2, 1), b = randomized(c, 2, 2);
  CHECK(oracle::max_abs(enc.forward_upper(&a, lower) - enc.forward_upper(&b, lower)) > 1e-6);
}

TEST_CASE("pre-activation of the first adapted block is linear in ΔW") {
  const EncoderConfig c = small_config();
  const FrozenEncoder enc(c);
  const Matrix lower = enc.forward_lower(std::vector<Token>{2, 5, 8, 13});
  LowRankAdapter a = randomized(c, 2, 3);
  LowRankAdapter doubled = a;
  doubled.factors(c.split_layer, AffineSlot::kIn).b *= 2.0;
  const UpperTrace base = enc.forward_upper_traced(nullptr, lower);
  const UpperTrace once = enc.forward_upper_traced(&a, lower);
  const UpperTrace twice = enc.forward_upper_traced(&doubled, lower);
  const Matrix& h = base.blocks.front().normalized;
  const Matrix delta = adapter_delta(a, c.split_layer, AffineSlot::kIn);
  CHECK(oracle::max_abs(once.blocks.front().pre_act - base.blocks.front().pre_act - h * delta) <= 1e-12);
  CHECK(oracle::max_abs(twice.blocks.front().pre_act - base.blocks.front().pre_act - 2.0 * (h * delta)) <= 1e-12);
  CHECK(oracle::max_abs(twice.logits - enc.forward_upper(&doubled, lower)) == 0.0);
}

TEST_CASE("train_adapter: zero epochs, errors, determinism") {
  const EncoderConfig c = small_config();
  const FrozenEncoder enc(c);
  const std::vector<TrainingExample> data{{{1, 2, 3}, {9}}, {{4, 5, 6}, {10}}};
  AdapterHyper h;
  h.epochs = 0;
  const LowRankAdapter none = train_adapter(enc, data, h, 3);
  CHECK(none.task() == 3);
  for (Index l = c.split_layer; l < c.total_layers; ++l) CHECK(oracle::max_abs(adapter_delta(none, l)) == 0.0);

  h.epochs = 5;
  CHECK(train_adapter(enc, data, h, 3) == train_adapter(enc, data, h, 3));
  CHECK_THROWS_AS(train_adapter(enc, {}, h, 3), std::invalid_argument);
  h.rank = 0;
  CHECK_THROWS_AS(train_adapter(enc, data, h, 3), std::invalid_argument);
}

TEST_CASE("loss on a repeated pair is non-increasing over epochs") {
  const EncoderConfig c = small_config();
  const FrozenEncoder enc(c);
  const std::vector<TrainingExample> data(8, TrainingExample{{3, 1, 4, 1}, {15}});
  AdapterHyper h;
  h.learning_rate = 0.01;
  h.epochs = 150;
  std::vector<double> curve;
  const LowRankAdapter a = train_adapter(enc, data, h, 0, &curve);
  REQUIRE(curve.size() == 150);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i] <= curve[i - 1] + 1e-3);
  CHECK(curve.back() < 0.5 * curve.front());
  INFO("curve " << curve.front() << " -> " << curve.back());
  CHECK(generate(enc, &a, data[0].prompt, 2) == std::vector<Token>{15});
}

TEST_CASE("analytic gradient matches central differences") {
  const gradcheck::Result r = gradcheck::run(300, 1e-4);
  CHECK(r.coordinates == 300);
  CHECK(r.failures == 0);
  INFO("worst relative error " << r.worst_relative);
}

TEST_CASE("generate: eos model, length bound and step oracle") {
  const EncoderConfig c = small_config();
  const FrozenEncoder enc(c);
  EncoderWeights eos_weights = enc.weights();
  eos_weights.head_bias(kEosToken) = 1e6;
  const FrozenEncoder eos_model(c, eos_weights);
  const std::vector<Token> prompt{4, 8, 15};
  CHECK(generate(eos_model, nullptr, prompt, 5).empty());

  // Keep eos away so the length bound is what stops decoding.
  EncoderWeights no_eos = enc.weights();
  no_eos.head_bias(kEosToken) = -1e6;
  const FrozenEncoder chatty(c, no_eos);
  CHECK(generate(chatty, nullptr, prompt, 1).size() == 1);
  CHECK(generate(chatty, nullptr, prompt, 6).size() == 6);

  for (std::uint64_t s = 0; s < 10; ++s) {
    const LowRankAdapter a = randomized(c, 2, 40 + s);
    CHECK(generate(enc, &a, prompt, 6) == decode_oracle(enc, &a, prompt, 6));
    CHECK(generate(chatty, &a, prompt, 6) == decode_oracle(chatty, &a, prompt, 6));
  }
}

TEST_CASE("training leaves the frozen base and other adapters untouched") {
  const EncoderConfig c = small_config();
  const FrozenEncoder enc(c);
  const auto before = enc.serialize_weights();
  const std::vector<Token> probe{1, 2, 3};
  const Matrix lower_before = enc.forward_lower(probe);

  AdapterBank bank;
  AdapterHyper h;
  h.epochs = 10;
  bank.add(train_adapter(enc, std::vector<TrainingExample>{{{1, 2, 3}, {9}}}, h, 0));
  const LowRankAdapter first = bank.at(0);
  bank.add(train_adapter(enc, std::vector<TrainingExample>{{{4, 5, 6}, {11}}}, h, 1));
  CHECK(bank.at(0) == first);
  CHECK(enc.serialize_weights() == before);
  CHECK(enc.forward_lower(probe) == lower_before);
  CHECK_THROWS_AS(bank.add(first), std::invalid_argument);
  CHECK(bank.find(7) == nullptr);
}

}  // TEST_SUITE
