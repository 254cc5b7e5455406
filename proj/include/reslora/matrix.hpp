// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace reslora {

/// Thrown when matrix shapes do not line up. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles. The only numeric container in the
/// library; immutable-by-convention once built (algebra returns new values).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
    if (rows == 0 || cols == 0) {
      throw ShapeError("Matrix: dimensions must be positive, got " +
                       std::to_string(rows) + "x" + std::to_string(cols));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double c, const Matrix& m);

/// dst += c * src, in place.
void add_scaled(Matrix& dst, double c, const Matrix& src);

double frobenius_norm(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

/// Euclidean norm of each column. Columns are the batch axis everywhere in
/// this library, so this is the per-example norm.
std::vector<double> column_norms(const Matrix& m);

/// Arithmetic mean of the per-column norms.
double mean_column_norm(const Matrix& m);

/// Deterministic pseudo-random generator: xoshiro256** state seeded through
/// splitmix64, gaussians via Box-Muller. The algorithm is fixed so a port in
/// another language can reproduce the exact draw sequence (see README).
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform on [0, 1), 53 bits.
  double next_uniform();

  /// Standard normal draw. Box-Muller; generates pairs, caches the spare.
  double next_gaussian();

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Derives an independent child seed for a named stream (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// rows x cols matrix of i.i.d. N(0, std^2) entries, filled row-major.
Matrix gaussian_fill(SeededRng& rng, std::size_t rows, std::size_t cols, double std);

}  // namespace reslora
