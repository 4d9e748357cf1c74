#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ncap/commands.hpp"

namespace {

struct RawFlags {
  std::string config;
  std::string out;
  std::string seeds;
  std::string format;
  std::optional<std::size_t> jobs;
};

void add_common(CLI::App* cmd, RawFlags& f) {
  cmd->add_option("--config", f.config, "JSON experiment config (defaults when omitted)");
  cmd->add_option("--out", f.out, "output directory (overrides output_dir)");
  cmd->add_option("--seeds", f.seeds, "replicate count N (seeds 0..N-1) or a comma list");
  cmd->add_option("--format", f.format, "report formats: json,csv");
  cmd->add_option("--jobs", f.jobs, "parallel replicate runs")->check(CLI::PositiveNumber);
}

ncap::CliOverrides to_overrides(const RawFlags& f) {
  ncap::CliOverrides o;
  if (!f.config.empty()) o.config = f.config;
  if (!f.out.empty()) o.out = f.out;
  if (!f.seeds.empty()) o.seeds = ncap::parse_seed_spec(f.seeds);
  if (!f.format.empty()) o.formats = ncap::parse_formats(f.format);
  o.jobs = f.jobs;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ncap: loss-family and prior experiments on a synthetic recognition task"};
  app.set_version_flag("--version", std::string(ncap::kToolVersion));
  app.require_subcommand(1);

  RawFlags flags;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every loss and the adapter");
  CLI::App* compare = app.add_subcommand("compare", "train one student per loss variant and write reports");
  CLI::App* prior = app.add_subcommand("prior-analysis", "TP vs NCAP error propagation under a corrupted teacher");
  CLI::App* report = app.add_subcommand("report", "re-aggregate comparison rows in the output directory");
  for (CLI::App* cmd : {gradcheck, compare, prior, report}) add_common(cmd, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return ncap::kExitUsage;
  }

  ncap::CliOverrides overrides;
  try {
    overrides = to_overrides(flags);
  } catch (const ncap::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ncap::kExitUsage;
  }

  if (gradcheck->parsed()) return ncap::cmd_gradcheck(overrides, std::cout, std::cerr);
  if (compare->parsed()) return ncap::cmd_compare(overrides, std::cout, std::cerr);
  if (prior->parsed()) return ncap::cmd_prior_analysis(overrides, std::cout, std::cerr);
  return ncap::cmd_report(overrides, std::cout, std::cerr);
}
