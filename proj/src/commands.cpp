#include "ncap/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <ostream>
#include <set>
#include <thread>

#include "ncap/fileio.hpp"
#include "ncap/prior.hpp"

namespace ncap {

namespace {

constexpr std::uint64_t kGradcheckStream = 900;
constexpr std::uint64_t kAdapterCheckStream = 901;

template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (jobs == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::vector<std::string> unique_loss_names(const std::vector<LossSpec>& losses) {
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (const auto& l : losses) {
    if (!seen.insert(l.name()).second) {
      throw ConfigError("config: loss '" + l.name() + "' listed twice; per-loss report files would collide");
    }
    names.push_back(l.name());
  }
  return names;
}

void print_aggregates(const ComparisonReport& report, std::ostream& out) {
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %4s %9s %9s %9s %9s %9s %9s\n", "loss", "runs", "accuracy", "wer", "cer",
                "ece_word", "ece_char", "conf_std");
  out << line;
  for (const auto& a : report.aggregates) {
    std::snprintf(line, sizeof line, "%-16s %4zu %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f\n", a.loss.c_str(), a.runs,
                  a.accuracy_mean, a.wer_mean, a.cer_mean, a.ece_word_mean, a.ece_char_mean, a.confidence_std_mean);
    out << line;
  }
}

void report_failures(const std::vector<RunRow>& rows, std::ostream& err) {
  for (const auto& r : rows) {
    if (!r.ok) err << "failed: loss " << r.loss << " seed " << r.seed << ": " << r.error << "\n";
  }
}

// Config errors and filesystem trouble with the output directory map to exit 2.
template <typename Fn>
int guarded(std::ostream& err, Fn body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::runtime_error& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitUsage;
}

}  // namespace

ExperimentConfig resolve_config(const CliOverrides& overrides) {
  ExperimentConfig config = overrides.config ? load_config(*overrides.config) : ExperimentConfig{};
  if (overrides.out) config.output_dir = *overrides.out;
  if (overrides.seeds) config.seeds = *overrides.seeds;
  if (overrides.formats) config.formats = *overrides.formats;
  if (overrides.jobs) config.jobs = *overrides.jobs;
  config.validate();
  return config;
}

std::vector<GradcheckLine> run_gradchecks(const ExperimentConfig& config) {
  std::vector<GradcheckLine> lines;
  std::size_t index = 0;
  for (LossKind kind : all_loss_kinds()) {
    LossSpec spec{kind};
    for (const auto& l : config.losses) {
      if (l.kind == kind) spec = l;
    }
    GradcheckLine line{spec.name(), 0.0, false};
    for (std::size_t i = 0; i < config.gradcheck.instances; ++i) {
      const std::uint64_t seed =
          derive_seed(derive_seed(config.task.seed, kGradcheckStream), index * config.gradcheck.instances + i);
      const GradcheckInstance inst = make_gradcheck_instance(config.task, spec, seed);
      line.max_rel_error = std::max(line.max_rel_error, gradcheck_recognizer(inst.params, inst.sample, spec,
                                                                             &inst.teacher_logits, config.gradcheck.step));
    }
    line.pass = line.max_rel_error < kGradcheckTolerance;
    lines.push_back(line);
    ++index;
  }

  GradcheckLine adapter{"ncap_adapter", 0.0, false};
  for (std::size_t i = 0; i < config.gradcheck.instances; ++i) {
    const AdapterCheckInstance inst =
        make_adapter_gradcheck_instance(config.task.sequence_length, config.task.embed_dim, config.task.prior_dim,
                                        derive_seed(derive_seed(config.task.seed, kAdapterCheckStream), i));
    adapter.max_rel_error =
        std::max(adapter.max_rel_error, gradcheck_adapter(inst.h, inst.params, inst.upstream, config.gradcheck.step));
  }
  adapter.pass = adapter.max_rel_error < kGradcheckTolerance;
  lines.push_back(adapter);
  return lines;
}

ComparisonReport run_compare(const ExperimentConfig& config) {
  unique_loss_names(config.losses);
  ComparisonOptions opts;
  opts.losses = config.losses;
  opts.seeds = config.seeds;
  opts.jobs = config.jobs;
  ComparisonReport report = run_comparison(config.task, opts);
  report.config_hash = config_hash(config);
  report.tool_version = std::string(kToolVersion);
  return report;
}

PriorAnalysisReport run_prior_report(const ExperimentConfig& config) {
  std::vector<std::vector<PriorSeedRow>> per_seed(config.seeds.size());
  parallel_for(config.seeds.size(), config.jobs, [&](std::size_t i) {
    TaskConfig task = config.task;
    task.seed = replicate_seed(config.task.seed, config.seeds[i]);
    std::vector<PriorSeedRow> rows;
    try {
      for (auto& r : run_prior_analysis(task, config.prior_analysis)) {
        rows.push_back(PriorSeedRow{config.seeds[i], true, {}, std::move(r)});
      }
    } catch (const std::exception& e) {
      rows.clear();
      for (PriorKind kind : {PriorKind::kTextPrior, PriorKind::kNcap}) {
        PriorSeedRow row{config.seeds[i], false, e.what(), {}};
        row.result.kind = kind;
        rows.push_back(std::move(row));
      }
    }
    per_seed[i] = std::move(rows);
  });

  PriorAnalysisReport report;
  report.meta = {std::string(kToolVersion), config_hash(config)};
  report.corruption_fraction = config.prior_analysis.corruption_fraction;
  for (auto& rows : per_seed) {
    for (auto& r : rows) report.rows.push_back(std::move(r));
  }
  report.aggregates = aggregate_prior_rows(report.rows);
  return report;
}

int cmd_gradcheck(const CliOverrides& overrides, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = resolve_config(overrides);
    const double step = config.gradcheck.step;
    if (step < kMinGradcheckStep || step > kMaxGradcheckStep) {
      err << "warning: gradcheck step " << step << " is outside the recommended range [" << kMinGradcheckStep << ", "
          << kMaxGradcheckStep << "]\n";
    }
    bool all_pass = true;
    char line[160];
    for (const auto& g : run_gradchecks(config)) {
      std::snprintf(line, sizeof line, "%-16s max_rel_error=%.3e %s\n", g.name.c_str(), g.max_rel_error,
                    g.pass ? "ok" : "FAIL");
      out << line;
      all_pass = all_pass && g.pass;
    }
    out << (all_pass ? "all gradients within " : "some gradients exceed ") << fmt("%.0e", kGradcheckTolerance) << "\n";
    return all_pass ? kExitOk : kExitPartial;
  });
}

int cmd_compare(const CliOverrides& overrides, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = resolve_config(overrides);
    const std::vector<std::string> names = unique_loss_names(config.losses);
    std::filesystem::create_directories(config.output_dir);
    const ComparisonReport report = run_compare(config);
    write_comparison_files(report, names, config.output_dir, config.formats);
    print_aggregates(report, out);
    out << "config_hash " << report.config_hash << ", reports in " << config.output_dir.string() << "\n";
    report_failures(report.rows, err);
    return report.any_failed() ? kExitPartial : kExitOk;
  });
}

int cmd_prior_analysis(const CliOverrides& overrides, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = resolve_config(overrides);
    std::filesystem::create_directories(config.output_dir);
    const PriorAnalysisReport report = run_prior_report(config);
    write_prior_analysis_files(report, config.output_dir, config.formats);

    char line[200];
    std::snprintf(line, sizeof line, "%-6s %4s %10s %10s %12s %12s\n", "prior", "runs", "prior_cer", "output_cer",
                  "pearson_wer", "pearson_cer");
    out << line;
    for (const auto& a : report.aggregates) {
      const std::string pw = a.pearson_wer_mean ? fmt("%.4f", *a.pearson_wer_mean) : "null";
      const std::string pc = a.pearson_cer_mean ? fmt("%.4f", *a.pearson_cer_mean) : "null";
      std::snprintf(line, sizeof line, "%-6s %4zu %10.4f %10.4f %12s %12s\n", std::string(prior_name(a.kind)).c_str(),
                    a.runs, a.prior_cer_mean, a.output_cer_mean, pw.c_str(), pc.c_str());
      out << line;
    }
    for (const auto& r : report.rows) {
      if (r.ok && !r.result.null_reason.empty()) {
        out << "seed " << r.seed << " " << prior_name(r.result.kind) << ": pearson null (" << r.result.null_reason
            << ")\n";
      }
      if (!r.ok) err << "failed: seed " << r.seed << " " << prior_name(r.result.kind) << ": " << r.error << "\n";
    }
    out << "config_hash " << report.meta.config_hash << ", reports in " << config.output_dir.string() << "\n";
    return report.any_failed() ? kExitPartial : kExitOk;
  });
}

int cmd_report(const CliOverrides& overrides, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = resolve_config(overrides);
    const std::filesystem::path& dir = config.output_dir;
    ComparisonReport report;
    if (std::filesystem::exists(dir / "comparison.json")) {
      report = parse_comparison_json(read_file(dir / "comparison.json"));
    } else if (std::filesystem::exists(dir / "comparison.csv")) {
      report = parse_comparison_csv(read_file(dir / "comparison.csv"));
    } else {
      throw ConfigError("no comparison.json or comparison.csv in '" + dir.string() + "'");
    }
    if (config.formats.json) write_file_atomic(dir / "comparison.json", comparison_json(report));
    if (config.formats.csv) write_file_atomic(dir / "comparison.csv", comparison_csv(report));
    print_aggregates(report, out);
    out << "config_hash " << report.config_hash << ", tool " << report.tool_version << "\n";
    return kExitOk;
  });
}

}  // namespace ncap
