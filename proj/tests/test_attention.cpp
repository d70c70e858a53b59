#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "deepatt/attention.hpp"
#include "oracles.hpp"

using namespace deepatt;
using Td = Tensor<double>;

namespace {

Td random_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Td(std::move(shape), std::move(v));
}

AttentionParams<double> random_params(std::size_t d, std::mt19937_64& rng) {
  return {random_tensor({d, d}, rng), random_tensor({d, d}, rng), random_tensor({d, d}, rng),
          random_tensor({d, d}, rng)};
}

std::vector<double> values(const Td& t) { return {t.data().begin(), t.data().end()}; }

// Rows of x [n, d] reordered so row i of the result is row perm[i] of x.
Td permute_rows(const Td& x, const std::vector<std::size_t>& perm) {
  const std::size_t d = x.dim(1);
  std::vector<double> out;
  for (std::size_t i : perm)
    for (std::size_t c = 0; c < d; ++c) out.push_back(x.data()[i * d + c]);
  return Td(x.shape(), out);
}

}  // namespace

TEST_CASE("config validation and scale divisor") {
  CHECK(MultiHeadConfig{}.width == 200);
  CHECK(MultiHeadConfig{}.heads == 8);
  CHECK_THROWS_AS((MultiHeadConfig{10, 3, ScaleMode::kPerHead}.validate()), ConfigError);
  CHECK(MultiHeadConfig{8, 2, ScaleMode::kPerHead}.scale_divisor() == 4.0);
  CHECK(MultiHeadConfig{8, 2, ScaleMode::kFullWidth}.scale_divisor() == 8.0);
}

TEST_CASE("single key returns the value") {
  std::mt19937_64 rng(1);
  const Td q = random_tensor({1, 3}, rng), k = random_tensor({1, 3}, rng), v = random_tensor({1, 3}, rng);
  const auto out = values(scaled_dot_product_attention(q, k, v, nullptr, 3.0).values);
  for (std::size_t i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(v.data()[i]).epsilon(1e-12));
}

TEST_CASE("equal logits average the unmasked values") {
  std::mt19937_64 rng(2);
  const Td q = Td::zeros({1, 4, 3});
  const Td k = random_tensor({1, 4, 3}, rng), v = random_tensor({1, 4, 3}, rng);
  const PaddingMask mask = build_padding_mask({3}, 4);
  const auto out = values(scaled_dot_product_attention(q, k, v, &mask, 3.0).values);
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = (v.data()[c] + v.data()[3 + c] + v.data()[6 + c]) / 3.0;
    for (std::size_t row = 0; row < 4; ++row) CHECK(out[row * 3 + c] == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("two-token identity example") {
  const Td eye({2, 2}, {1, 0, 0, 1});
  const auto res = scaled_dot_product_attention(eye, eye, eye, nullptr, 2.0);
  const long double a = std::exp(1.0L / std::sqrt(2.0L));
  const long double w_self = a / (a + 1.0L), w_other = 1.0L / (a + 1.0L);
  const auto w = values(res.weights);
  const auto out = values(res.values);
  CHECK(std::abs(w[0] - static_cast<double>(w_self)) < 1e-6);
  CHECK(std::abs(w[1] - static_cast<double>(w_other)) < 1e-6);
  CHECK(std::abs(out[0] - static_cast<double>(w_self)) < 1e-6);
  CHECK(std::abs(out[1] - static_cast<double>(w_other)) < 1e-6);
  CHECK(std::abs(out[2] - static_cast<double>(w_other)) < 1e-6);
  CHECK(std::abs(out[3] - static_cast<double>(w_self)) < 1e-6);
}

TEST_CASE("padding mask") {
  const auto all = build_padding_mask({3}, 3);
  CHECK(all.valid == std::vector<std::uint8_t>{1, 1, 1});
  const auto part = build_padding_mask({2}, 4);
  CHECK(part.valid == std::vector<std::uint8_t>{1, 1, 0, 0});
  CHECK_THROWS_AS(build_padding_mask({0}, 3), DataError);
  CHECK_THROWS_AS(build_padding_mask({4}, 3), DataError);
}

TEST_CASE("attention rows are distributions over valid keys") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Td q = random_tensor({3, 5, 4}, rng), k = random_tensor({3, 5, 4}, rng), v = random_tensor({3, 5, 4}, rng);
    const PaddingMask mask = build_padding_mask({5, 2, 4}, 5);
    const auto w = values(scaled_dot_product_attention(q, k, v, &mask, 4.0).weights);
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t i = 0; i < 5; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 5; ++j) {
          const double x = w[(b * 5 + i) * 5 + j];
          s += x;
          if (j >= mask.lengths[b]) CHECK(x < 1e-8);
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
  }
}

TEST_CASE("one head reduces to projected scaled dot-product attention") {
  std::mt19937_64 rng(4);
  const Td x = random_tensor({4, 6}, rng);
  const auto p = random_params(6, rng);
  const auto mha = values(multi_head_attention(x, p, MultiHeadConfig{6, 1, ScaleMode::kPerHead}, nullptr));
  const auto att =
      scaled_dot_product_attention(matmul(x, p.query), matmul(x, p.key), matmul(x, p.value), nullptr, 6.0).values;
  const auto ref = values(matmul(att, p.output));
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(mha[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("multi-head attention matches a per-head oracle") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 3, d = 4, h = 2, w = d / h;
    const Td x = random_tensor({n, d}, rng);
    const auto p = random_params(d, rng);
    const auto got = values(multi_head_attention(x, p, MultiHeadConfig{d, h, ScaleMode::kPerHead}, nullptr));

    const auto xv = values(x);
    std::vector<double> concat(n * d, 0.0);
    for (std::size_t head = 0; head < h; ++head) {
      // Head projections: columns [head*w, (head+1)*w) of each packed map.
      auto project = [&](const Td& m) {
        std::vector<double> out(n * w, 0.0);
        for (std::size_t t = 0; t < n; ++t)
          for (std::size_t c = 0; c < w; ++c)
            for (std::size_t k = 0; k < d; ++k) out[t * w + c] += xv[t * d + k] * m.data()[k * d + head * w + c];
        return out;
      };
      const auto q = project(p.query), k = project(p.key), v = project(p.value);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<long double> logits;
        for (std::size_t j = 0; j < n; ++j) {
          long double s = 0;
          for (std::size_t c = 0; c < w; ++c) s += q[i * w + c] * k[j * w + c];
          logits.push_back(s / std::sqrt(static_cast<long double>(w)));
        }
        const auto a = oracle::softmax(logits);
        for (std::size_t c = 0; c < w; ++c) {
          long double s = 0;
          for (std::size_t j = 0; j < n; ++j) s += a[j] * v[j * w + c];
          concat[i * d + head * w + c] = static_cast<double>(s);
        }
      }
    }
    const auto want = oracle::matmul(concat, values(p.output), n, d, d);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-5);
  }
}

TEST_CASE("self-attention is permutation-equivariant") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const Td x = random_tensor({5, 8}, rng);
    const auto p = random_params(8, rng);
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const MultiHeadConfig cfg{8, 2, ScaleMode::kPerHead};
    const auto a = values(permute_rows(multi_head_attention(x, p, cfg, nullptr), perm));
    const auto b = values(multi_head_attention(permute_rows(x, perm), p, cfg, nullptr));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-5);
  }
}

TEST_CASE("every position reaches every other in one layer") {
  std::mt19937_64 rng(7);
  const Td x = random_tensor({5, 8}, rng);
  const auto p = random_params(8, rng);
  const MultiHeadConfig cfg{8, 2, ScaleMode::kPerHead};
  const auto base = values(multi_head_attention(x, p, cfg, nullptr));
  for (std::size_t j = 0; j < 5; ++j) {
    auto xs = values(x);
    xs[j * 8] += 1e-3;
    const auto moved = values(multi_head_attention(Td(x.shape(), xs), p, cfg, nullptr));
    for (std::size_t i = 0; i < 5; ++i) {
      double diff = 0;
      for (std::size_t c = 0; c < 8; ++c) diff += std::abs(moved[i * 8 + c] - base[i * 8 + c]);
      CHECK(diff > 1e-9);
    }
  }
}

TEST_CASE("padded keys do not influence valid queries") {
  std::mt19937_64 rng(8);
  const Td x = random_tensor({1, 4, 8}, rng);
  const auto p = random_params(8, rng);
  const MultiHeadConfig cfg{8, 2, ScaleMode::kPerHead};
  const PaddingMask mask = build_padding_mask({2}, 4);
  const auto a = values(multi_head_attention(x, p, cfg, &mask));
  auto xs = values(x);
  for (std::size_t i = 16; i < 32; ++i) xs[i] = 100.0;
  const auto b = values(multi_head_attention(Td(x.shape(), xs), p, cfg, &mask));
  for (std::size_t i = 0; i < 16; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}
