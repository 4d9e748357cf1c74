#include "ncap/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ncap {

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw DomainError(std::string(what) + ": non-finite input");
  }
}

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("Matrix: ragged row list");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

double Rng::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(engine_);
}

double Rng::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

std::size_t Rng::uniform_index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return mix64(mix64(base) ^ (index * 0xD1B54A32D192ED03ULL + 1));
}

std::vector<double> softmax_temp(std::span<const double> logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("softmax_temp: tau must be positive and finite");
  if (logits.empty()) throw DomainError("softmax_temp: empty logits");
  require_finite(logits, "softmax_temp");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - peak) / tau);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

Matrix softmax_rows(const Matrix& logits, double tau) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto p = softmax_temp(logits.row(r), tau);
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return out;
}

Matrix log_softmax_rows(const Matrix& logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("log_softmax_rows: tau must be positive and finite");
  require_finite(logits.values(), "log_softmax_rows");
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double z : row) total += std::exp((z - peak) / tau);
    const double log_total = std::log(total);
    for (std::size_t c = 0; c < row.size(); ++c) out(r, c) = (row[c] - peak) / tau - log_total;
  }
  return out;
}

std::vector<double> prelu(std::span<const double> x, double slope) {
  if (!std::isfinite(slope)) throw DomainError("prelu: non-finite slope");
  require_finite(x, "prelu");
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [slope](double v) { return v >= 0.0 ? v : slope * v; });
  return out;
}

Matrix prelu(const Matrix& x, double slope) {
  return Matrix(x.rows(), x.cols(), prelu(x.values(), slope));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const auto src = b.row(k);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto arow = a.row(k);
    const auto brow = b.row(k);
    for (std::size_t i = 0; i < arow.size(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto dst = out.row(i);
      for (std::size_t j = 0; j < brow.size(); ++j) dst[j] += aki * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < arow.size(); ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix linear_forward(const Matrix& x, const Matrix& w, std::optional<std::span<const double>> bias) {
  if (x.cols() != w.rows()) throw ShapeError("linear_forward: input " + shape_str(x) + " vs weight " + shape_str(w));
  Matrix out = matmul(x, w);
  if (bias) {
    if (bias->size() != w.cols()) {
      throw ShapeError("linear_forward: bias length " + std::to_string(bias->size()) + " vs " +
                       std::to_string(w.cols()) + " outputs");
    }
    for (std::size_t r = 0; r < out.rows(); ++r) {
      auto row = out.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += (*bias)[c];
    }
  }
  return out;
}

Matrix column_sums(const Matrix& a) {
  Matrix out(1, a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto row = a.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out(0, c) += row[c];
  }
  return out;
}

Matrix random_normal(std::size_t rows, std::size_t cols, Rng& rng, double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal(0.0, stddev);
  return m;
}

Matrix random_uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace ncap
