#pragma once

// Dense row-major matrices, stable softmax, PReLU, affine maps and an owned
// seeded RNG. Everything is 64-bit floating point.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "ncap/errors.hpp"

namespace ncap {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  // Row-list construction, mostly for tests: Matrix{{1, 2}, {3, 4}}.
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const;
  bool same_shape(const Matrix& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Single-owner random source. Identical seeds give identical streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  double normal(double mean = 0.0, double stddev = 1.0);
  double uniform(double lo = 0.0, double hi = 1.0);
  std::size_t uniform_index(std::size_t n);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);
// Derives an independent stream seed from a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

std::vector<double> softmax_temp(std::span<const double> logits, double tau);
// Row-wise softmax_temp.
Matrix softmax_rows(const Matrix& logits, double tau);
// Row-wise log-softmax of logits / tau.
Matrix log_softmax_rows(const Matrix& logits, double tau);

std::vector<double> prelu(std::span<const double> x, double slope);
Matrix prelu(const Matrix& x, double slope);

// x (L x m) times w (m x n) plus optional bias (length n), broadcast over rows.
Matrix linear_forward(const Matrix& x, const Matrix& w, std::optional<std::span<const double>> bias = std::nullopt);

Matrix matmul(const Matrix& a, const Matrix& b);
// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// Column sums as a 1 x cols matrix.
Matrix column_sums(const Matrix& a);

Matrix random_normal(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0);
Matrix random_uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi);

double max_abs(std::span<const double> v);

}  // namespace ncap
