#include "ncap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ncap {

namespace {

template <typename Seq>
std::size_t levenshtein(const Seq& a, const Seq& b) {
  // Two-row DP over the shorter sequence.
  const auto& longer = a.size() >= b.size() ? a : b;
  const auto& shorter = a.size() >= b.size() ? b : a;
  std::vector<std::size_t> prev(shorter.size() + 1);
  std::vector<std::size_t> cur(shorter.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= longer.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= shorter.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (longer[i - 1] == shorter[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[shorter.size()];
}

template <typename Seq>
ErrorRates rates(std::span<const Seq> refs, std::span<const Seq> hyps) {
  if (refs.size() != hyps.size()) throw DomainError("error_rates: reference and hypothesis counts differ");
  if (refs.empty()) throw DomainError("error_rates: empty input");
  std::size_t wrong = 0;
  std::size_t edits = 0;
  std::size_t ref_len = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!(refs[i] == hyps[i])) ++wrong;
    edits += levenshtein(refs[i], hyps[i]);
    ref_len += refs[i].size();
  }
  ErrorRates out;
  out.wer = static_cast<double>(wrong) / static_cast<double>(refs.size());
  if (ref_len == 0) {
    out.cer = edits == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  } else {
    out.cer = static_cast<double>(edits) / static_cast<double>(ref_len);
  }
  return out;
}

void check_image(const Image& img) {
  if (img.pixels.size() != img.height * img.width * img.channels) throw ShapeError("image: pixel count mismatch");
  for (double v : img.pixels) {
    if (!std::isfinite(v)) throw DomainError("image: non-finite pixel");
  }
}

void check_pair(const ImagePair& pair) {
  check_image(pair.a);
  check_image(pair.b);
  if (pair.a.height != pair.b.height || pair.a.width != pair.b.width || pair.a.channels != pair.b.channels) {
    throw ShapeError("image pair: shapes differ");
  }
  if (pair.a.pixels.empty()) throw ShapeError("image pair: empty images");
}

// Summed-area table with a zero border: table[(y+1)*(w+1) + x+1] = sum over [0..y] x [0..x].
std::vector<double> integral(const std::vector<double>& plane, std::size_t h, std::size_t w) {
  std::vector<double> t((h + 1) * (w + 1), 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    double row = 0.0;
    for (std::size_t x = 0; x < w; ++x) {
      row += plane[y * w + x];
      t[(y + 1) * (w + 1) + x + 1] = t[y * (w + 1) + x + 1] + row;
    }
  }
  return t;
}

double box_sum(const std::vector<double>& t, std::size_t w, std::size_t y, std::size_t x, std::size_t n) {
  const std::size_t stride = w + 1;
  return t[(y + n) * stride + x + n] - t[y * stride + x + n] - t[(y + n) * stride + x] + t[y * stride + x];
}

}  // namespace

std::size_t edit_distance(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  return levenshtein(a, b);
}

std::size_t edit_distance(std::string_view a, std::string_view b) { return levenshtein(a, b); }

ErrorRates error_rates(std::span<const std::string> refs, std::span<const std::string> hyps) {
  return rates(refs, hyps);
}

ErrorRates error_rates(std::span<const std::vector<std::size_t>> refs,
                       std::span<const std::vector<std::size_t>> hyps) {
  return rates(refs, hyps);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DomainError("pearson: length mismatch");
  if (x.size() < 2) throw DomainError("pearson: need at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("pearson: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::string_view level_name(ReliabilityLevel level) {
  return level == ReliabilityLevel::kWord ? "word" : "character";
}

std::string_view rule_name(CharConfidenceRule rule) {
  switch (rule) {
    case CharConfidenceRule::kMaxProbability:
      return "max_probability";
  }
  return "unknown";
}

std::size_t ReliabilityReport::total() const {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.count;
  return n;
}

void ReliabilityReport::recompute_ece() {
  const std::size_t n = total();
  ece = 0.0;
  if (n == 0) return;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    ece += static_cast<double>(b.count) / static_cast<double>(n) * std::abs(b.accuracy() - b.mean_confidence());
  }
}

void ReliabilityReport::merge(const ReliabilityReport& other) {
  if (other.bins.size() != bins.size()) throw ShapeError("reliability merge: bin counts differ");
  for (std::size_t i = 0; i < bins.size(); ++i) {
    bins[i].conf_sum += other.bins[i].conf_sum;
    bins[i].correct_sum += other.bins[i].correct_sum;
    bins[i].count += other.bins[i].count;
  }
  recompute_ece();
}

std::size_t reliability_bin_index(double confidence, std::size_t n_bins) {
  const double n = static_cast<double>(n_bins);
  auto k = static_cast<std::size_t>(std::max(0.0, std::ceil(confidence * n) - 1.0));
  k = std::min(k, n_bins - 1);
  // Correct for rounding in confidence * n so the edges stay right-closed.
  while (k > 0 && confidence <= static_cast<double>(k) / n) --k;
  while (k + 1 < n_bins && confidence > static_cast<double>(k + 1) / n) ++k;
  return k;
}

ReliabilityReport reliability(std::span<const double> confidences, std::span<const bool> correct, std::size_t n_bins,
                              ReliabilityLevel level) {
  if (confidences.size() != correct.size()) throw DomainError("reliability: length mismatch");
  if (n_bins == 0) throw DomainError("reliability: need at least one bin");
  ReliabilityReport report;
  report.level = level;
  report.bins.resize(n_bins);
  for (std::size_t k = 0; k < n_bins; ++k) {
    report.bins[k].low = static_cast<double>(k) / static_cast<double>(n_bins);
    report.bins[k].high = static_cast<double>(k + 1) / static_cast<double>(n_bins);
  }
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) throw DomainError("reliability: confidence outside [0, 1]");
    auto& bin = report.bins[reliability_bin_index(c, n_bins)];
    bin.conf_sum += c;
    bin.correct_sum += correct[i] ? 1.0 : 0.0;
    ++bin.count;
  }
  report.recompute_ece();
  return report;
}

SequenceConfidences sequence_confidences(std::span<const Matrix> probs,
                                         std::span<const std::vector<std::size_t>> labels, CharConfidenceRule rule) {
  if (probs.size() != labels.size()) throw DomainError("sequence_confidences: length mismatch");
  SequenceConfidences out;
  for (std::size_t s = 0; s < probs.size(); ++s) {
    const Matrix& p = probs[s];
    if (p.rows() != labels[s].size()) throw ShapeError("sequence_confidences: positions vs labels");
    double word_conf = 1.0;
    bool word_ok = true;
    for (std::size_t r = 0; r < p.rows(); ++r) {
      const auto row = p.row(r);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      double conf = 0.0;
      switch (rule) {
        case CharConfidenceRule::kMaxProbability:
          conf = row[best];
          break;
      }
      const bool ok = best == labels[s][r];
      out.char_conf.push_back(conf);
      out.char_correct.push_back(ok);
      word_conf *= conf;
      word_ok = word_ok && ok;
    }
    out.word_conf.push_back(word_conf);
    out.word_correct.push_back(word_ok);
  }
  return out;
}

double confidence_std(std::span<const double> max_probs) {
  if (max_probs.empty()) throw DomainError("confidence_std: empty input");
  const double n = static_cast<double>(max_probs.size());
  const double mean = std::accumulate(max_probs.begin(), max_probs.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : max_probs) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / n);
}

double confidence_std(const Matrix& prob_rows) {
  if (prob_rows.rows() == 0) throw DomainError("confidence_std: empty input");
  std::vector<double> maxes(prob_rows.rows());
  for (std::size_t r = 0; r < prob_rows.rows(); ++r) {
    const auto row = prob_rows.row(r);
    double total = 0.0;
    for (double v : row) {
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError("confidence_std: entry outside [0, 1]");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw DomainError("confidence_std: row is not a probability vector");
    maxes[r] = *std::max_element(row.begin(), row.end());
  }
  return confidence_std(maxes);
}

double mean_squared_error(const ImagePair& pair) {
  check_pair(pair);
  double acc = 0.0;
  for (std::size_t i = 0; i < pair.a.pixels.size(); ++i) {
    const double d = pair.a.pixels[i] - pair.b.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pair.a.pixels.size());
}

double psnr_from_mse(double mse) {
  if (!(mse >= 0.0)) throw DomainError("psnr: negative or NaN mse");
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double psnr(const ImagePair& pair) { return psnr_from_mse(mean_squared_error(pair)); }

double ssim(const ImagePair& pair) {
  check_pair(pair);
  const std::size_t h = pair.a.height;
  const std::size_t w = pair.a.width;
  if (h < kSsimWindow || w < kSsimWindow) throw ShapeError("ssim: image smaller than the 8x8 window");
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  const double n = static_cast<double>(kSsimWindow * kSsimWindow);

  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t c = 0; c < pair.a.channels; ++c) {
    std::vector<double> x(h * w), y(h * w), xx(h * w), yy(h * w), xy(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
      x[i] = pair.a.pixels[i * pair.a.channels + c];
      y[i] = pair.b.pixels[i * pair.b.channels + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto sx = integral(x, h, w), sy = integral(y, h, w);
    const auto sxx = integral(xx, h, w), syy = integral(yy, h, w), sxy = integral(xy, h, w);
    for (std::size_t r = 0; r + kSsimWindow <= h; ++r) {
      for (std::size_t q = 0; q + kSsimWindow <= w; ++q) {
        const double mx = box_sum(sx, w, r, q, kSsimWindow) / n;
        const double my = box_sum(sy, w, r, q, kSsimWindow) / n;
        const double vx = box_sum(sxx, w, r, q, kSsimWindow) / n - mx * mx;
        const double vy = box_sum(syy, w, r, q, kSsimWindow) / n - my * my;
        const double cxy = box_sum(sxy, w, r, q, kSsimWindow) / n - mx * my;
        total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++windows;
      }
    }
  }
  return total / static_cast<double>(windows);
}

}  // namespace ncap
