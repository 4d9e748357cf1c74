#pragma once

// Reference implementations written straight from the definitions, kept independent of
// the library code they check. Slow on purpose.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ncap/metrics.hpp"
#include "ncap/numcore.hpp"

namespace oracle {

inline std::vector<double> softmax(std::span<const double> z, double tau = 1.0) {
  long double m = -std::numeric_limits<long double>::infinity();
  for (double v : z) m = std::max<long double>(m, v / tau);
  long double total = 0.0L;
  std::vector<long double> e;
  for (double v : z) {
    e.push_back(std::exp(static_cast<long double>(v) / tau - m));
    total += e.back();
  }
  std::vector<double> out;
  for (long double v : e) out.push_back(static_cast<double>(v / total));
  return out;
}

inline ncap::Matrix softmax_rows(const ncap::Matrix& z, double tau = 1.0) {
  ncap::Matrix out(z.rows(), z.cols());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto p = softmax(z.row(r), tau);
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return out;
}

inline ncap::Matrix matmul(const ncap::Matrix& a, const ncap::Matrix& b) {
  ncap::Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0.0L;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(s);
    }
  }
  return out;
}

inline ncap::Matrix add_row(ncap::Matrix m, const ncap::Matrix& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) += bias(0, c);
  }
  return m;
}

inline ncap::Matrix prelu(ncap::Matrix m, double slope) {
  for (double& v : m.values()) v = v >= 0.0 ? v : slope * v;
  return m;
}

inline double max_rel_diff(std::span<const double> a, std::span<const double> b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

// Central differences of f over every entry of the given views; returns gradients in view order.
inline std::vector<std::vector<double>> central_differences(const std::function<double()>& f,
                                                            const std::vector<std::span<double>>& views, double step) {
  std::vector<std::vector<double>> out;
  for (auto view : views) {
    std::vector<double> g(view.size());
    for (std::size_t i = 0; i < view.size(); ++i) {
      const double saved = view[i];
      view[i] = saved + step;
      const double up = f();
      view[i] = saved - step;
      const double down = f();
      view[i] = saved;
      g[i] = (up - down) / (2.0 * step);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// Levenshtein distance from the complete (n+1) x (m+1) table.
template <typename T>
std::size_t edit_distance(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, sub});
    }
  }
  return d[a.size()][b.size()];
}

// Pearson from the textbook sums, in long double.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<long double>(x.size());
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

// Mean SSIM over every 8x8 window position (stride 1), per channel, from per-window sums.
inline double ssim(const ncap::ImagePair& pair) {
  constexpr std::size_t w = 8;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto& a = pair.a;
  const auto& b = pair.b;
  long double total = 0.0L;
  std::size_t windows = 0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    for (std::size_t y0 = 0; y0 + w <= a.height; ++y0) {
      for (std::size_t x0 = 0; x0 + w <= a.width; ++x0) {
        long double ma = 0, mb = 0;
        for (std::size_t y = y0; y < y0 + w; ++y) {
          for (std::size_t x = x0; x < x0 + w; ++x) {
            ma += a.at(y, x, c);
            mb += b.at(y, x, c);
          }
        }
        ma /= w * w;
        mb /= w * w;
        long double va = 0, vb = 0, cov = 0;
        for (std::size_t y = y0; y < y0 + w; ++y) {
          for (std::size_t x = x0; x < x0 + w; ++x) {
            const long double da = a.at(y, x, c) - ma, db = b.at(y, x, c) - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
          }
        }
        va /= w * w;
        vb /= w * w;
        cov /= w * w;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
    }
  }
  return static_cast<double>(total / windows);
}

inline ncap::Matrix random_matrix(std::size_t rows, std::size_t cols, ncap::Rng& rng, double scale = 1.0) {
  ncap::Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal(0.0, scale);
  return m;
}

}  // namespace oracle
