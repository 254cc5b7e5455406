// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "reslora/matrix.hpp"
#include "test_util.hpp"

using namespace reslora;
using reslora::testing::bits_equal;

TEST_CASE("matmul hand oracles") {
  const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});

  CHECK(bits_equal(matmul(Matrix::identity(2), m), m));

  // [[1,2],[3,4]] * [[1],[1]]: rows are 1+2 and 3+4.
  const Matrix v = Matrix::from_rows({{1}, {1}});
  const Matrix prod = matmul(m, v);
  CHECK(prod(0, 0) == 3.0);
  CHECK(prod(1, 0) == 7.0);

  const Matrix zero(2, 3);
  CHECK(bits_equal(matmul(m, zero), Matrix(2, 3)));
}

TEST_CASE("matmul dimension mismatch names both shapes") {
  const Matrix a(2, 3), b(2, 2);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), ShapeError);
  try {
    matmul(a, b);
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("2x2") != std::string::npos);
  }
}

TEST_CASE("matmul associativity within 1e-9 relative") {
  SeededRng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = gaussian_fill(rng, 4, 5, 1.0);
    const Matrix b = gaussian_fill(rng, 5, 3, 1.0);
    const Matrix c = gaussian_fill(rng, 3, 6, 1.0);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    const double scale = frobenius_norm(left);
    CHECK(max_abs_diff(left, right) <= 1e-9 * std::max(scale, 1.0));
  }
}

TEST_CASE("frobenius_norm") {
  CHECK(frobenius_norm(Matrix::from_rows({{3, 4}})) == 5.0);
  CHECK(frobenius_norm(Matrix(3, 2)) == 0.0);
  CHECK(frobenius_norm(Matrix::from_rows({{1, 2}, {2, 0}})) == 3.0);
}

TEST_CASE("frobenius_norm scales with |c|") {
  SeededRng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix a = gaussian_fill(rng, 3, 4, 1.0);
    const double c = 4.0 * rng.next_gaussian();
    const double lhs = frobenius_norm(c * a);
    const double rhs = std::fabs(c) * frobenius_norm(a);
    CHECK(std::fabs(lhs - rhs) <= 1e-12 * std::max(rhs, 1.0));
  }
}

TEST_CASE("max_abs_diff") {
  const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(max_abs_diff(m, m) == 0.0);
  CHECK(max_abs_diff(Matrix::from_rows({{1}}), Matrix::from_rows({{3}})) == 2.0);
  CHECK(max_abs_diff(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0, 2}})) == 2.0);
  CHECK_THROWS_AS(max_abs_diff(m, Matrix(1, 2)), ShapeError);
}

TEST_CASE("gaussian_fill determinism and moments") {
  SeededRng rng_a(123);
  SeededRng rng_b(123);
  const Matrix a = gaussian_fill(rng_a, 17, 9, 0.3);
  const Matrix b = gaussian_fill(rng_b, 17, 9, 0.3);
  CHECK(bits_equal(a, b));

  SeededRng rng_c(124);
  CHECK_FALSE(bits_equal(a, gaussian_fill(rng_c, 17, 9, 0.3)));

  // 1e5 draws: sample mean within 0.01*std of zero, sample std within 1%.
  SeededRng rng(2024);
  const double std_dev = 2.0;
  const Matrix big = gaussian_fill(rng, 250, 400, std_dev);
  double mean = 0.0;
  for (double v : big.data()) mean += v;
  mean /= static_cast<double>(big.size());
  CHECK(std::fabs(mean) < 0.01 * std_dev);

  double var = 0.0;
  for (double v : big.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(big.size() - 1);
  CHECK(std::sqrt(var) == doctest::Approx(std_dev).epsilon(0.01));

  CHECK(big.all_finite());
  CHECK_THROWS_AS(gaussian_fill(rng, 2, 2, 0.0), std::invalid_argument);
}

TEST_CASE("seeded rng streams are independent per stream id") {
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
  SeededRng r1(mix_seed(5, 0));
  SeededRng r2(mix_seed(5, 1));
  CHECK(r1.next_u64() != r2.next_u64());
}

TEST_CASE("column norms and batch reduction") {
  const Matrix m = Matrix::from_rows({{3, 0}, {4, 2}});
  const auto norms = column_norms(m);
  CHECK(norms[0] == 5.0);
  CHECK(norms[1] == 2.0);
  CHECK(mean_column_norm(m) == doctest::Approx(3.5));
}

TEST_CASE("matrix construction guards") {
  CHECK_THROWS_AS(Matrix(0, 3), ShapeError);
  CHECK_THROWS_AS(Matrix::from_rows({{1, 2}, {3}}), ShapeError);
  CHECK_THROWS_AS(static_cast<void>(Matrix(2, 2) + Matrix(2, 3)), ShapeError);
}
