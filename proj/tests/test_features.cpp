#include <doctest.h>

#include <cmath>

#include "anyssr/features.hpp"
#include "anyssr/stream.hpp"
#include "oracles.hpp"

using namespace anyssr;

TEST_SUITE("features") {

TEST_CASE("mean_pool examples") {
  Matrix a(2, 2);
  a << 1, 3, 3, 5;
  CHECK(mean_pool(a) == Vector{{2.0, 4.0}});
  Matrix b(1, 2);
  b << 7, -2;
  CHECK(mean_pool(b) == Vector{{7.0, -2.0}});
  Rng rng(3);
  const Matrix r = oracle::gaussian(rng, 5, 3);
  CHECK(oracle::max_abs(mean_pool(r) - oracle::column_mean(r)) <= 1e-12);
  CHECK_THROWS_AS(mean_pool(Matrix(0, 3)), std::invalid_argument);
}

TEST_CASE("mean_pool is linear") {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const Matrix h1 = oracle::gaussian(rng, 6, 4), h2 = oracle::gaussian(rng, 6, 4);
    const double alpha = rng.normal(), beta = rng.normal();
    const Vector lhs = mean_pool(alpha * h1 + beta * h2);
    const Vector rhs = alpha * mean_pool(h1) + beta * mean_pool(h2);
    CHECK(oracle::max_abs(lhs - rhs) <= 1e-12);
  }
}

TEST_CASE("projection determinism and scale") {
  const auto a = ExpansionPipeline::make(9, 16, 160);
  const auto b = ExpansionPipeline::make(9, 16, 160);
  CHECK(a.projection() == b.projection());
  CHECK(a.projection() != ExpansionPipeline::make(10, 16, 160).projection());

  const Matrix& p = a.projection();
  const double n = static_cast<double>(p.size());
  const double mean = p.sum() / n;
  const double sd = std::sqrt((p.array() - mean).square().sum() / (n - 1.0));
  CHECK(std::abs(sd - 0.25) <= 0.2 * 0.25);

  const auto unit = ExpansionPipeline::make(9, 16, 160, ScaleMode::kUnit);
  const double sd_unit = std::sqrt((unit.projection().array() - unit.projection().mean()).square().sum() / (n - 1.0));
  CHECK(std::abs(sd_unit - 1.0) <= 0.2);
  CHECK(parse_scale_mode(to_string(ScaleMode::kUnit)) == ScaleMode::kUnit);
  CHECK_THROWS_AS(parse_scale_mode("bogus"), std::invalid_argument);
  CHECK_THROWS_AS(ExpansionPipeline::make(1, 0, 4), std::invalid_argument);
}

TEST_CASE("expand examples") {
  const auto id = ExpansionPipeline::with_projection(Matrix::Identity(2, 2));
  CHECK(id.expand(Vector{{1.0, -1.0}}) == Vector{{1.0, 0.0}});
  const auto p = ExpansionPipeline::make(4, 6, 30);
  CHECK(oracle::max_abs(p.expand(Vector::Zero(6))) == 0.0);
  CHECK_THROWS_AS(p.expand(Vector::Zero(5)), std::invalid_argument);

  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector h = oracle::gaussian(rng, 6, 1);
    const Vector out = p.expand(h);
    for (Index j = 0; j < 30; ++j) {
      double dot = 0.0;
      for (Index i = 0; i < 6; ++i) dot += h(i) * p.projection()(i, j);
      CHECK(out(j) >= 0.0);
      CHECK(std::abs(out(j) - std::max(0.0, dot)) <= 1e-12);
    }
    const double c = 0.1 + rng.uniform() * 5.0;
    CHECK(oracle::max_abs(p.expand(c * h) - c * out) <= 1e-12);
  }
}

TEST_CASE("expand_rows equals row-wise expand") {
  Rng rng(8);
  const auto p = ExpansionPipeline::make(4, 6, 30);
  const Matrix rows = oracle::gaussian(rng, 11, 6);
  const Matrix out = p.expand_rows(rows);
  for (Index i = 0; i < rows.rows(); ++i) CHECK(out.row(i).transpose() == p.expand(rows.row(i).transpose()));
}

TEST_CASE("probe on separable clusters and identical datasets") {
  Rng rng(12);
  Matrix a = oracle::gaussian(rng, 50, 3) * 0.3;
  Matrix b = oracle::gaussian(rng, 50, 3) * 0.3;
  a.col(0).array() += 3.0;
  b.col(0).array() -= 3.0;
  const std::vector<Matrix> separable{a, b};
  CHECK(separability_probe(separable) == 1.0);

  const std::vector<Matrix> same{a, a};
  CHECK(separability_probe(same) == doctest::Approx(0.5).epsilon(0.02));

  const std::vector<Matrix> one{a};
  CHECK_THROWS_AS(separability_probe(one), std::invalid_argument);
}

TEST_CASE("XOR probe: expansion makes the classes separable") {
  const std::vector<Matrix> xor_sets = xor_probe_datasets(2024);
  const double raw = separability_probe(xor_sets);
  const auto pipeline = ExpansionPipeline::make(6, 2, 40);
  const double expanded = separability_probe(xor_sets, &pipeline);
  CHECK(raw <= 0.6);
  CHECK(expanded >= 0.95);
  CHECK(expanded >= raw);
}

}  // TEST_SUITE
