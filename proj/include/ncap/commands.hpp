#pragma once

// Subcommand implementations behind the ncap executable. Each returns the process exit code:
//   0 success, 1 partial experiment failure, 2 usage or configuration error.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "ncap/experiment.hpp"
#include "ncap/report.hpp"

namespace ncap {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitUsage = 2;

// Recommended finite-difference step range; steps outside it only produce a warning.
inline constexpr double kMinGradcheckStep = 1e-8;
inline constexpr double kMaxGradcheckStep = 1e-4;
inline constexpr double kGradcheckTolerance = 1e-5;

struct CliOverrides {
  std::optional<std::filesystem::path> config;  // absent: built-in defaults
  std::optional<std::filesystem::path> out;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<ReportFormats> formats;
  std::optional<std::size_t> jobs;
};

// Loads the config (or defaults), applies overrides, validates. Throws ConfigError.
ExperimentConfig resolve_config(const CliOverrides& overrides);

struct GradcheckLine {
  std::string name;  // loss name or "ncap_adapter"
  double max_rel_error = 0.0;
  bool pass = false;
};

// Every loss variant (hyperparameters taken from config.losses when listed) plus the adapter.
std::vector<GradcheckLine> run_gradchecks(const ExperimentConfig& config);

// run_comparison with metadata filled in.
ComparisonReport run_compare(const ExperimentConfig& config);
// One run_prior_analysis per replicate seed.
PriorAnalysisReport run_prior_report(const ExperimentConfig& config);

int cmd_gradcheck(const CliOverrides& overrides, std::ostream& out, std::ostream& err);
int cmd_compare(const CliOverrides& overrides, std::ostream& out, std::ostream& err);
int cmd_prior_analysis(const CliOverrides& overrides, std::ostream& out, std::ostream& err);
// Re-aggregates comparison rows found in the output directory and rewrites the comparison files.
int cmd_report(const CliOverrides& overrides, std::ostream& out, std::ostream& err);

}  // namespace ncap
