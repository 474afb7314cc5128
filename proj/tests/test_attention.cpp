#include <doctest.h>

#include <numeric>

#include "mac/errors.hpp"
#include "mac/multi_attention.hpp"
#include "mac/ops.hpp"
#include "test_util.hpp"

using namespace mac;
using testing::random_tensor;

namespace {

// Values k/8 with |k| <= 16: products and short sums stay exact in binary.
Tensord dyadic(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = (static_cast<double>(rng.below(33)) - 16.0) / 8.0;
  return Tensord::from(std::move(shape), std::move(v));
}

Tensord permute_columns(const Tensord& m, const std::vector<std::size_t>& perm) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = m.data()[i * cols + perm[j]];
  return Tensord::from({rows, cols}, out);
}

}  // namespace

TEST_CASE("scores are row-stochastic") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto omega = random_tensor<float>(rng, {16, 9}, 3.0);
    AttentionParams<float> p{random_tensor<float>(rng, {6, 16}), random_tensor<float>(rng, {4, 6}, 3.0)};
    const auto a = attention_scores(omega, p);
    REQUIRE(a.shape() == Shape{4, 9});
    for (std::size_t t = 0; t < 4; ++t) {
      double s = 0;
      for (std::size_t r = 0; r < 9; ++r) {
        const float v = a.data()[t * 9 + r];
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("zero second-layer weights give uniform scores") {
  Rng rng(2);
  for (std::size_t r : {1, 3, 4, 16}) {
    const auto omega = random_tensor<float>(rng, {8, r});
    AttentionParams<float> p{random_tensor<float>(rng, {5, 8}), Tensorf::zeros({3, 5})};
    const auto a = attention_scores(omega, p);
    for (float v : a.data()) CHECK(v == 1.0f / static_cast<float>(r));
  }
}

TEST_CASE("scores and pooling agree with the direct formula") {
  Rng rng(3);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto omega = random_tensor(rng, {8, 4});
    AttentionParams<double> p{random_tensor(rng, {3, 8}), random_tensor(rng, {2, 3})};
    const auto a = attention_scores(omega, p);
    const auto psi = pool_descriptors(omega, a);
    const auto a_ref = oracle::attention(testing::to_matrix(omega), testing::to_matrix(p.w1), testing::to_matrix(p.w2));
    const auto psi_ref = oracle::pool(testing::to_matrix(omega), a_ref);
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t r = 0; r < 4; ++r) worst = std::max(worst, std::abs(a.data()[t * 4 + r] - a_ref[t][r]));
    for (std::size_t k = 0; k < 8; ++k)
      for (std::size_t t = 0; t < 2; ++t) worst = std::max(worst, std::abs(psi.data()[k * 2 + t] - psi_ref[k][t]));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("a single attention row") {
  Rng rng(4);
  const auto omega = random_tensor(rng, {6, 5});
  AttentionParams<double> p{random_tensor(rng, {3, 6}), random_tensor(rng, {1, 3})};
  const auto a = attention_scores(omega, p);
  CHECK(a.shape() == Shape{1, 5});
  CHECK(pool_descriptors(omega, a).shape() == Shape{6, 1});
}

TEST_CASE("uniform and one-hot scores") {
  Rng rng(5);
  const auto omega = random_tensor(rng, {6, 4});
  const auto psi = pool_descriptors(omega, Tensord::full({2, 4}, 0.25));
  for (std::size_t k = 0; k < 6; ++k) {
    double mean = 0;
    for (std::size_t r = 0; r < 4; ++r) mean += omega.data()[k * 4 + r];
    mean /= 4;
    for (std::size_t t = 0; t < 2; ++t) CHECK(psi.data()[k * 2 + t] == doctest::Approx(std::max(0.0, mean)).epsilon(1e-15));
  }
  // Row 0 picks patch 2, row 1 picks patch 0.
  const auto one_hot = pool_descriptors(omega, Tensord::from({2, 4}, {0, 0, 1, 0, 1, 0, 0, 0}));
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(one_hot.data()[k * 2 + 0] == std::max(0.0, omega.data()[k * 4 + 2]));
    CHECK(one_hot.data()[k * 2 + 1] == std::max(0.0, omega.data()[k * 4 + 0]));
  }
}

TEST_CASE("pooled descriptors are rectified convex combinations") {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const auto omega = random_tensor(rng, {7, 5}, 2.0);
    AttentionParams<double> p{random_tensor(rng, {4, 7}), random_tensor(rng, {3, 4}, 2.0)};
    const auto a = attention_scores(omega, p);
    const auto psi = pool_descriptors(omega, a);
    for (std::size_t k = 0; k < 7; ++k)
      for (std::size_t t = 0; t < 3; ++t) {
        double combo = 0, lo = 1e300, hi = -1e300;
        for (std::size_t r = 0; r < 5; ++r) {
          const double v = omega.data()[k * 5 + r];
          combo += a.data()[t * 5 + r] * v;
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        const double got = psi.data()[k * 3 + t];
        CHECK(got >= 0.0);
        CHECK(got == doctest::Approx(std::max(0.0, combo)).epsilon(1e-13));
        CHECK(combo >= lo - 1e-12);
        CHECK(combo <= hi + 1e-12);
      }
  }
}

TEST_CASE("permuting patches together with their scores leaves the pooled descriptor unchanged") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 2 + rng.below(15);
    std::vector<std::size_t> perm(r);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));

    // Exactly representable inputs: every partial sum is exact, so the order
    // of accumulation cannot matter and equality must be bitwise.
    const auto omega = dyadic(rng, {6, r});
    const auto a = dyadic(rng, {3, r});
    CHECK(testing::bit_equal(pool_descriptors(omega, a),
                             pool_descriptors(permute_columns(omega, perm), permute_columns(a, perm))));

    // Scores produced by the attention layer itself permute along with the patches.
    const auto g = random_tensor(rng, {6, r});
    AttentionParams<double> p{random_tensor(rng, {4, 6}), random_tensor(rng, {3, 4})};
    const auto scores = attention_scores(g, p);
    const auto permuted_scores = attention_scores(permute_columns(g, perm), p);
    CHECK(testing::max_abs_diff(permute_columns(scores, perm), permuted_scores) < 1e-15);
    CHECK(testing::max_abs_diff(pool_descriptors(g, scores), pool_descriptors(permute_columns(g, perm), permuted_scores)) <
          1e-13);
  }
}

TEST_CASE("batched row layout matches the matrix form") {
  Rng rng(8);
  const auto phi = random_tensor(rng, {3, 5, 6});  // B x R x d
  AttentionParams<double> p{random_tensor(rng, {4, 6}), random_tensor(rng, {2, 4})};
  const auto a = attention_scores_rows(phi, p);
  const auto psi_t = pool_descriptors_rows(phi, a);
  CHECK(a.shape() == Shape{3, 2, 5});
  CHECK(psi_t.shape() == Shape{3, 2, 6});
  for (std::size_t b = 0; b < 3; ++b) {
    const auto omega = transpose(select(phi, 0, b));
    CHECK(testing::max_abs_diff(attention_scores(omega, p), select(a, 0, b)) < 1e-15);
    CHECK(testing::max_abs_diff(pool_descriptors(omega, select(a, 0, b)), transpose(select(psi_t, 0, b))) < 1e-15);
  }
}

TEST_CASE("attention shape errors") {
  AttentionParams<double> p{Tensord::zeros({3, 8}), Tensord::zeros({2, 3})};
  CHECK_THROWS_AS(attention_scores(Tensord::zeros({7, 4}), p), DimensionError);
  CHECK_THROWS_AS(pool_descriptors(Tensord::zeros({8, 4}), Tensord::zeros({2, 5})), DimensionError);
}
