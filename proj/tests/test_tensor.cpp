#include <doctest.h>

#include <cmath>
#include <random>

#include "deepatt/gradcheck.hpp"
#include "deepatt/tensor.hpp"
#include "oracles.hpp"

using namespace deepatt;
using Td = Tensor<double>;

namespace {

Td random_tensor(Shape shape, std::mt19937_64& rng, bool grad = false) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Td(std::move(shape), std::move(v), grad);
}

std::vector<double> values(const Td& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("tensor construction checks shape against data") {
  CHECK_THROWS_AS(Td({2, 3}, std::vector<double>(5)), ShapeError);
  const Td t({2, 3}, std::vector<double>(6, 1.0));
  CHECK(t.numel() == shape_numel(t.shape()));
  CHECK(Td::scalar(2.5).item() == 2.5);
}

TEST_CASE("matmul examples") {
  const Td a({2, 2}, {1, 2, 3, 4});
  CHECK(values(matmul(a, Td({2, 2}, {1, 0, 0, 1}))) == std::vector<double>{1, 2, 3, 4});
  CHECK(values(matmul(a, Td({2, 1}, {5, 6}))) == std::vector<double>{17, 39});
  std::mt19937_64 rng(1);
  const auto z = matmul(Td::zeros({2, 3}), random_tensor({3, 4}, rng));
  CHECK(z.shape() == Shape{2, 4});
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("matmul agrees with the triple-loop oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Td a = random_tensor({3, 5}, rng), b = random_tensor({5, 4}, rng);
    const auto want = oracle::matmul(values(a), values(b), 3, 5, 4);
    const auto got = values(matmul(a, b));
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Td::zeros({2, 3}), Td::zeros({4, 2}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("softmax examples and properties") {
  CHECK(values(softmax_lastdim(Td({2}, {0, 0}))) == std::vector<double>{0.5, 0.5});
  const auto p = values(softmax_lastdim(Td({3}, {1, 2, 3})));
  const auto want = oracle::softmax({1, 2, 3});
  const double paper[] = {0.09003, 0.24473, 0.66524};
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(p[i] - static_cast<double>(want[i])) < 1e-12);
    CHECK(std::abs(p[i] - paper[i]) < 1e-5);
  }
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Td x = random_tensor({4, 6}, rng);
    const auto a = values(softmax_lastdim(x));
    const auto b = values(softmax_lastdim(add(x, Td::full({4, 6}, 7.25))));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 6; ++c) {
        s += a[r * 6 + c];
        CHECK(a[r * 6 + c] >= 0.0);
        CHECK(std::abs(a[r * 6 + c] - b[r * 6 + c]) < 1e-12);
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
  CHECK_THROWS_AS(softmax_lastdim(Td({2}, {0, NAN})), NumericError);
}

TEST_CASE("layer_norm normalizes each slice") {
  std::mt19937_64 rng(4);
  const Td x = random_tensor({5, 16}, rng);
  const auto y = values(layer_norm(x, Td::full({16}, 1.0), Td::zeros({16})));
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mean += y[r * 16 + c];
    mean /= 16;
    for (std::size_t c = 0; c < 16; ++c) var += (y[r * 16 + c] - mean) * (y[r * 16 + c] - mean);
    var /= 16;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(5);
  const Td x = random_tensor({10, 10}, rng);
  SUBCASE("evaluation is the exact identity") {
    CHECK(dropout(x, 0.5, ForwardContext{false, &rng}).same_storage(x));
    CHECK(dropout(x, 1.0, ForwardContext{true, &rng}).same_storage(x));
  }
  SUBCASE("training zeroes or rescales") {
    const auto y = values(dropout(x, 0.8, ForwardContext{true, &rng}));
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] == 0.0) ++zeros;
      else CHECK(y[i] == doctest::Approx(x.data()[i] / 0.8));
    }
    CHECK(zeros > 0);
    CHECK(zeros < 60);
  }
  SUBCASE("keep probability must lie in (0, 1]") {
    CHECK_THROWS_AS(dropout(x, 0.0, ForwardContext{true, &rng}), ConfigError);
    CHECK_THROWS_AS(dropout(x, 1.5, ForwardContext{true, &rng}), ConfigError);
  }
}

TEST_CASE("backward computes hand-derived gradients") {
  Td x({2}, {1, 2}, true);
  backward(sum(mul(x, x)));
  CHECK(values(Td({2}, {x.grad()[0], x.grad()[1]})) == std::vector<double>{2, 4});
}

TEST_CASE("backward through a diamond accumulates both paths") {
  // z = a*b + (a*b)*a  ->  dz/da = b + 2ab, dz/db = a + a^2
  Td a = Td::scalar(3.0, true), b = Td::scalar(-2.0, true);
  const Td y = mul(a, b);
  backward(add(y, mul(y, a)));
  CHECK(a.grad()[0] == doctest::Approx(-2.0 + 2 * 3 * -2.0));
  CHECK(b.grad()[0] == doctest::Approx(3.0 + 9.0));
}

TEST_CASE("leaf gradients accumulate until cleared") {
  Td x({1}, {3}, true);
  backward(sum(x));
  backward(sum(scale(x, 2.0)));
  CHECK(x.grad()[0] == 3.0);
  x.zero_grad();
  CHECK((!x.has_grad() || x.grad()[0] == 0.0));
}

TEST_CASE("a second backward over the same graph is rejected") {
  Td x({2}, {1, 2}, true);
  const Td loss = sum(mul(x, x));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), UsageError);
}

TEST_CASE("backward needs a scalar that depends on a gradient leaf") {
  Td x({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(x, x)), UsageError);
  CHECK_THROWS_AS(backward(sum(Td({2}, {1, 2}))), UsageError);
}

TEST_CASE("no-grad mode records nothing") {
  Td x({2}, {1, 2}, true);
  NoGradGuard guard;
  const Td y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.is_leaf());
}

TEST_CASE("shape helpers") {
  std::mt19937_64 rng(6);
  const Td x = random_tensor({2, 3, 4}, rng);
  CHECK(transpose_last2(x).shape() == Shape{2, 4, 3});
  CHECK(slice_lastdim(x, 1, 2).shape() == Shape{2, 3, 2});
  CHECK(concat_lastdim<double>({x, x}).shape() == Shape{2, 3, 8});
  CHECK(select_time(x, 1).shape() == Shape{2, 4});
  CHECK(stack_time<double>({select_time(x, 0), select_time(x, 1), select_time(x, 2)}).shape() == Shape{2, 3, 4});
  CHECK(values(stack_time<double>({select_time(x, 0), select_time(x, 1), select_time(x, 2)})) == values(x));
  const auto shifted = values(time_shift(x, 1));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(shifted[(b * 3 + 0) * 4 + c] == x.data()[(b * 3 + 1) * 4 + c]);
      CHECK(shifted[(b * 3 + 2) * 4 + c] == 0.0);
    }
  const std::vector<std::size_t> rows{5};
  CHECK_THROWS_AS(gather_rows(Td::zeros({3, 2}), std::span<const std::size_t>(rows)), DataError);
  CHECK_THROWS_AS(reshape(x, {5, 5}), ShapeError);
  CHECK_THROWS_AS(slice_lastdim(x, 3, 2), ShapeError);
}

TEST_CASE("gradient check registry covers every op once and passes") {
  const auto names = gradcheck_ops();
  CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());
  GradCheckOptions options;
  options.seeds = 3;
  const auto results = run_gradcheck(options);
  REQUIRE(results.size() == names.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    CHECK(results[i].op == names[i]);
    CHECK_MESSAGE(results[i].pass, format_gradcheck_line(results[i]));
  }
}

TEST_CASE("a corrupted gradient is caught") {
  GradCheckOptions options;
  options.seeds = 1;
  options.corrupt = "softmax_lastdim";
  for (const auto& r : run_gradcheck(options)) CHECK(r.pass == (r.op != "softmax_lastdim"));
  options.corrupt = "no_such_op";
  CHECK_THROWS_AS(run_gradcheck(options), ConfigError);
}
