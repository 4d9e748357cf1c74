#pragma once

// Report serialization. Every file carries the tool version and config hash: JSON as top-level
// fields, CSV as a leading comment line
//     # ncap <version> config_hash=<hash>
// followed by a header row. Reals use the shortest round-trip decimal form, so parsing a CSV
// back recovers the written values exactly.
//
// File set written by compare into the output directory:
//   comparison.json / comparison.csv      per (loss, seed) rows; JSON also holds aggregates
//   reliability_<loss>.csv                level, bin_low, bin_high, mean_conf, accuracy, count
//   confidence_hist_<loss>.csv            bin_low, bin_high, count (per-position max probability)
// and by prior-analysis:
//   prior_analysis.json / prior_analysis.csv

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ncap/experiment.hpp"
#include "ncap/metrics.hpp"
#include "ncap/toytask.hpp"

namespace ncap {

struct ReportMeta {
  std::string tool_version;
  std::string config_hash;
  friend bool operator==(const ReportMeta&, const ReportMeta&) = default;
};

// ---- CSV primitives -----------------------------------------------------

std::string format_real(double v);
// Accepts everything format_real emits ("inf", "-inf", "nan" included). Throws ConfigError otherwise.
double parse_real(std::string_view text);

struct CsvTable {
  std::optional<ReportMeta> meta;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Throws ConfigError when the column is absent.
  std::size_t column(std::string_view name) const;
};

std::string csv_escape(std::string_view field);
// RFC 4180 quoting; '#' lines before the header are comments (the first may carry ReportMeta).
CsvTable parse_csv(std::string_view text);

// ---- Comparison ---------------------------------------------------------

std::string comparison_csv(const ComparisonReport& report);
std::string comparison_json(const ComparisonReport& report);
// Rows and metadata; aggregates are recomputed from the rows.
ComparisonReport parse_comparison_csv(std::string_view text);
ComparisonReport parse_comparison_json(std::string_view text);

std::string reliability_csv(const ReliabilityReport& character, const ReliabilityReport& word, const ReportMeta& meta);

// What a reliability CSV row exposes.
struct ReliabilityRow {
  std::string level;
  double bin_low = 0.0;
  double bin_high = 0.0;
  double mean_conf = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
  friend bool operator==(const ReliabilityRow&, const ReliabilityRow&) = default;
};
std::vector<ReliabilityRow> reliability_rows(const ReliabilityReport& report);
std::vector<ReliabilityRow> parse_reliability_csv(std::string_view text);

std::string confidence_hist_csv(const std::vector<std::size_t>& counts, const ReportMeta& meta);

// Writes the compare file set atomically. Loss names index the per-loss files.
void write_comparison_files(const ComparisonReport& report, const std::vector<std::string>& loss_names,
                            const std::filesystem::path& dir, const ReportFormats& formats);

// ---- Prior analysis -----------------------------------------------------

struct PriorSeedRow {
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  PriorAnalysisRow result;
};

struct PriorAggregate {
  PriorKind kind = PriorKind::kTextPrior;
  std::size_t runs = 0;
  double prior_cer_mean = 0.0;
  double output_cer_mean = 0.0;
  double prior_wer_mean = 0.0;
  double output_wer_mean = 0.0;
  // Mean over seeds where the coefficient is defined; absent when none are.
  std::optional<double> pearson_wer_mean;
  std::optional<double> pearson_cer_mean;
  std::size_t pearson_wer_defined = 0;
  std::size_t pearson_cer_defined = 0;
};

struct PriorAnalysisReport {
  ReportMeta meta;
  double corruption_fraction = 0.0;
  std::vector<PriorSeedRow> rows;  // seed order, TP then NCAP within a seed
  std::vector<PriorAggregate> aggregates;

  bool any_failed() const;
};

std::vector<PriorAggregate> aggregate_prior_rows(const std::vector<PriorSeedRow>& rows);

std::string prior_analysis_csv(const PriorAnalysisReport& report);
std::string prior_analysis_json(const PriorAnalysisReport& report);
void write_prior_analysis_files(const PriorAnalysisReport& report, const std::filesystem::path& dir,
                                const ReportFormats& formats);

}  // namespace ncap
