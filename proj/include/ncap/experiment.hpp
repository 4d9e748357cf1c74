#pragma once

// Experiment configuration read from a JSON file.
//
//   {
//     "task": { "alphabet_size": 20, ..., "teacher_loss": {"kind": "ce"} },
//     "losses": ["ce", {"kind": "ce_softened_kl", "alpha": 0.5, "beta": 0.7, "tau": 3}],
//     "seeds": 10,                     // or an explicit list [0, 3, 7]
//     "output_dir": "out",
//     "report_formats": ["json", "csv"],
//     "jobs": 1,
//     "gradcheck": {"step": 1e-5, "instances": 20},
//     "prior_analysis": {"corruption_fraction": 0.3, "prior_tau": 1.0}
//   }
//
// Every key is optional; unknown keys are rejected so typos do not silently fall back to defaults.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ncap/losses.hpp"
#include "ncap/toytask.hpp"

namespace ncap {

inline constexpr std::string_view kToolVersion = "0.1.0";

struct GradcheckSettings {
  double step = 1e-5;
  std::size_t instances = 20;
};

struct ReportFormats {
  bool json = true;
  bool csv = true;
};

struct ExperimentConfig {
  TaskConfig task;
  std::vector<LossSpec> losses;  // defaults to every variant
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir = "out";
  ReportFormats formats;
  std::size_t jobs = 1;
  GradcheckSettings gradcheck;
  PriorAnalysisOptions prior_analysis;

  ExperimentConfig();
  // Throws ConfigError (or DomainError for loss hyperparameters) on violated invariants.
  void validate() const;
};

// Throws ConfigError on malformed JSON, unknown keys or wrong types.
ExperimentConfig parse_config(std::string_view json_text);
// Throws ConfigError when the file cannot be read.
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical JSON of everything that influences results (output_dir, formats and jobs excluded).
std::string canonical_config(const ExperimentConfig& config);
// FNV-1a 64 of canonical_config, 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

// "10" -> {0..9}; "1,5,7" -> {1,5,7}. Throws ConfigError on malformed text.
std::vector<std::uint64_t> parse_seed_spec(std::string_view text);
// "json,csv" subsets. Throws ConfigError on unknown formats or an empty set.
ReportFormats parse_formats(std::string_view text);

}  // namespace ncap
