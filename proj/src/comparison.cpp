#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "ncap/toytask.hpp"

namespace ncap {

namespace {

struct LossOutcome {
  RunRow row;
  std::optional<Evaluation> eval;
};

std::vector<LossOutcome> run_replicate(const TaskConfig& base, const std::vector<LossSpec>& losses,
                                       std::uint64_t replicate) {
  TaskConfig config = base;
  config.seed = replicate_seed(base.seed, replicate);
  TrainOptions opts;
  opts.evaluate_each_epoch = false;

  std::vector<LossOutcome> out(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    out[i].row.loss = losses[i].name();
    out[i].row.seed = replicate;
  }

  std::optional<RecognizerParams> teacher;
  std::string teacher_error;
  const bool need_teacher = std::any_of(losses.begin(), losses.end(), [](const LossSpec& l) { return l.needs_teacher(); });
  if (need_teacher) {
    try {
      teacher = train_recognizer(config, Domain::kHr, config.teacher_loss, nullptr, opts).params;
    } catch (const std::exception& e) {
      teacher_error = std::string("teacher: ") + e.what();
    }
  }

  const std::vector<Sample> test = gen_dataset(config, Split::kTest, Domain::kLr);
  for (std::size_t i = 0; i < losses.size(); ++i) {
    RunRow& row = out[i].row;
    if (losses[i].needs_teacher() && !teacher) {
      row.ok = false;
      row.error = teacher_error;
      continue;
    }
    try {
      const TrainResult trained =
          train_recognizer(config, Domain::kLr, losses[i], teacher ? &*teacher : nullptr, opts);
      Evaluation ev = evaluate_recognizer(trained.params, test, config.n_bins);
      row.accuracy = ev.accuracy;
      row.wer = ev.rates.wer;
      row.cer = ev.rates.cer;
      row.ece_word = ev.word_reliability.ece;
      row.ece_char = ev.char_reliability.ece;
      row.mean_confidence = ev.mean_confidence;
      row.confidence_std = ev.confidence_std;
      out[i].eval = std::move(ev);
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
  }
  return out;
}

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  sd = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / static_cast<double>(v.size()));
}

}  // namespace

std::uint64_t replicate_seed(std::uint64_t base, std::uint64_t replicate) { return derive_seed(base, replicate); }

bool ComparisonReport::any_failed() const {
  return std::any_of(rows.begin(), rows.end(), [](const RunRow& r) { return !r.ok; });
}

std::vector<AggregateRow> aggregate_rows(std::span<const RunRow> rows) {
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.loss) == order.end()) order.push_back(r.loss);
  }
  std::vector<AggregateRow> out;
  for (const auto& name : order) {
    std::vector<double> acc, wer, cer, ew, ec, mc, cs;
    for (const auto& r : rows) {
      if (r.loss != name || !r.ok) continue;
      acc.push_back(r.accuracy);
      wer.push_back(r.wer);
      cer.push_back(r.cer);
      ew.push_back(r.ece_word);
      ec.push_back(r.ece_char);
      mc.push_back(r.mean_confidence);
      cs.push_back(r.confidence_std);
    }
    AggregateRow a;
    a.loss = name;
    a.runs = acc.size();
    mean_std(acc, a.accuracy_mean, a.accuracy_std);
    mean_std(wer, a.wer_mean, a.wer_std);
    mean_std(cer, a.cer_mean, a.cer_std);
    mean_std(ew, a.ece_word_mean, a.ece_word_std);
    mean_std(ec, a.ece_char_mean, a.ece_char_std);
    mean_std(mc, a.mean_confidence_mean, a.mean_confidence_std);
    mean_std(cs, a.confidence_std_mean, a.confidence_std_std);
    out.push_back(a);
  }
  return out;
}

ComparisonReport run_comparison(const TaskConfig& config, const ComparisonOptions& options) {
  config.validate();
  std::vector<LossSpec> losses = options.losses;
  if (losses.empty()) {
    for (LossKind k : all_loss_kinds()) losses.push_back(LossSpec{k});
  }
  for (const auto& l : losses) l.validate();
  if (options.seeds.empty()) throw ConfigError("run_comparison: no seeds");

  // Replicates are independent; results land in seed order regardless of scheduling.
  std::vector<std::vector<LossOutcome>> outcomes(options.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < options.seeds.size(); i = next++) {
      outcomes[i] = run_replicate(config, losses, options.seeds[i]);
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, options.seeds.size());
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ComparisonReport report;
  report.char_reliability.resize(losses.size());
  report.word_reliability.resize(losses.size());
  report.confidence_hist.assign(losses.size(), std::vector<std::size_t>(config.n_bins, 0));
  for (std::size_t l = 0; l < losses.size(); ++l) {
    report.char_reliability[l] = reliability({}, {}, config.n_bins, ReliabilityLevel::kCharacter);
    report.word_reliability[l] = reliability({}, {}, config.n_bins, ReliabilityLevel::kWord);
  }
  // Rows are grouped by loss, then seed.
  for (std::size_t l = 0; l < losses.size(); ++l) {
    for (auto& seed_outcomes : outcomes) {
      LossOutcome& o = seed_outcomes[l];
      report.rows.push_back(o.row);
      if (!o.eval) continue;
      report.char_reliability[l].merge(o.eval->char_reliability);
      report.word_reliability[l].merge(o.eval->word_reliability);
      for (double p : o.eval->max_probs) ++report.confidence_hist[l][reliability_bin_index(p, config.n_bins)];
    }
  }
  report.aggregates = aggregate_rows(report.rows);
  return report;
}

}  // namespace ncap
