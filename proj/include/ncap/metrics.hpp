#pragma once

// Evaluation statistics: sequence error rates, correlation, calibration and
// image quality.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ncap/numcore.hpp"

namespace ncap {

// Levenshtein distance with unit insert/delete/substitute costs.
std::size_t edit_distance(std::span<const std::size_t> a, std::span<const std::size_t> b);
std::size_t edit_distance(std::string_view a, std::string_view b);

struct ErrorRates {
  double wer = 0.0;  // fraction of sequences not matched exactly
  double cer = 0.0;  // total edit distance / total reference length
};

ErrorRates error_rates(std::span<const std::string> refs, std::span<const std::string> hyps);
ErrorRates error_rates(std::span<const std::vector<std::size_t>> refs, std::span<const std::vector<std::size_t>> hyps);

// Sample Pearson correlation (two-pass). Throws UndefinedCorrelation on constant input.
double pearson(std::span<const double> x, std::span<const double> y);

enum class ReliabilityLevel { kWord, kCharacter };
std::string_view level_name(ReliabilityLevel level);

struct ReliabilityBin {
  double low = 0.0;
  double high = 0.0;
  double conf_sum = 0.0;
  double correct_sum = 0.0;
  std::size_t count = 0;

  double mean_confidence() const { return count == 0 ? 0.0 : conf_sum / static_cast<double>(count); }
  double accuracy() const { return count == 0 ? 0.0 : correct_sum / static_cast<double>(count); }
};

struct ReliabilityReport {
  ReliabilityLevel level = ReliabilityLevel::kCharacter;
  std::vector<ReliabilityBin> bins;
  double ece = 0.0;

  std::size_t total() const;
  // Bin-wise merge of a report with identical binning; ece is recomputed.
  void merge(const ReliabilityReport& other);
  void recompute_ece();
};

// Equal-width right-closed bins on (0, 1]; confidence 0 lands in the first bin.
std::size_t reliability_bin_index(double confidence, std::size_t n_bins);

ReliabilityReport reliability(std::span<const double> confidences, std::span<const bool> correct, std::size_t n_bins,
                              ReliabilityLevel level = ReliabilityLevel::kCharacter);

// How a per-position confidence is read from a probability row. Only the
// max-probability rule exists today; the enum keeps the choice explicit in reports.
enum class CharConfidenceRule { kMaxProbability };
std::string_view rule_name(CharConfidenceRule rule);

struct SequenceConfidences {
  std::vector<double> char_conf;   // one per position
  std::vector<bool> char_correct;
  std::vector<double> word_conf;   // product of per-position confidences
  std::vector<bool> word_correct;  // whole sequence matched
};

// probs: one L x A probability matrix per sequence; labels: one label sequence per sequence.
SequenceConfidences sequence_confidences(std::span<const Matrix> probs, std::span<const std::vector<std::size_t>> labels,
                                         CharConfidenceRule rule = CharConfidenceRule::kMaxProbability);

// Population standard deviation of per-row maximum probabilities.
double confidence_std(const Matrix& prob_rows);
double confidence_std(std::span<const double> max_probs);

// Grayscale (channels = 1) or interleaved colour image with values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;  // (y * width + x) * channels + c

  double at(std::size_t y, std::size_t x, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }
};

struct ImagePair {
  Image a;
  Image b;
};

inline constexpr std::size_t kSsimWindow = 8;

double mean_squared_error(const ImagePair& pair);
// 10 * log10(1 / mse); +infinity when mse == 0.
double psnr_from_mse(double mse);
double psnr(const ImagePair& pair);
// Mean SSIM over every 8x8 window (stride 1, uniform weights), averaged over channels.
double ssim(const ImagePair& pair);

}  // namespace ncap
