#include "ncap/report.hpp"

#include <charconv>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "ncap/fileio.hpp"

namespace ncap {

namespace {

using json = nlohmann::ordered_json;

constexpr std::string_view kComparisonColumns[] = {"loss", "seed", "ok", "accuracy", "wer", "cer", "ece_word",
                                                   "ece_char", "mean_confidence", "confidence_std", "error"};

std::string meta_line(const ReportMeta& meta) {
  return "# ncap " + meta.tool_version + " config_hash=" + meta.config_hash + "\n";
}

std::optional<ReportMeta> parse_meta_line(std::string_view line) {
  constexpr std::string_view prefix = "# ncap ";
  if (line.substr(0, prefix.size()) != prefix) return std::nullopt;
  line.remove_prefix(prefix.size());
  const auto space = line.find(' ');
  if (space == std::string_view::npos) return std::nullopt;
  constexpr std::string_view key = "config_hash=";
  const std::string_view rest = line.substr(space + 1);
  if (rest.substr(0, key.size()) != key) return std::nullopt;
  return ReportMeta{std::string(line.substr(0, space)), std::string(rest.substr(key.size()))};
}

std::string join_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) out += ',';
    out += csv_escape(fields[i]);
  }
  out += '\n';
  return out;
}

std::uint64_t parse_u64_field(std::string_view text, std::string_view what) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(what) + ": '" + std::string(text) + "' is not a non-negative integer");
  }
  return v;
}

bool parse_bool_field(std::string_view text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("expected true/false, got '" + std::string(text) + "'");
}

json meta_json(const ReportMeta& meta) {
  return json{{"tool_version", meta.tool_version}, {"config_hash", meta.config_hash}};
}

json optional_real(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string opt_field(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

std::string real_or_empty(bool ok, double v) { return ok ? format_real(v) : std::string(); }

double real_field_or_zero(std::string_view text) { return text.empty() ? 0.0 : parse_real(text); }

}  // namespace

// ---- CSV primitives -----------------------------------------------------

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_real(std::string_view text) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError("'" + std::string(text) + "' is not a number");
  }
  return v;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw ConfigError("csv: missing column '" + std::string(name) + "'");
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

CsvTable parse_csv(std::string_view text) {
  CsvTable table;
  std::size_t pos = 0;
  // Leading comment lines.
  while (pos < text.size() && text[pos] == '#') {
    const auto nl = text.find('\n', pos);
    const std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    if (!table.meta) table.meta = parse_meta_line(line);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
  }

  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (; pos < text.size(); ++pos) {
    const char c = text[pos];
    if (quoted) {
      if (c == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          field += '"';
          ++pos;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && pos + 1 < text.size() && text[pos + 1] == '\n') ++pos;
      if (any || !field.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
      }
      field.clear();
      record.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw ConfigError("csv: unterminated quoted field");
  if (any || !field.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  if (records.empty()) throw ConfigError("csv: missing header row");
  table.header = std::move(records.front());
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].size() != table.header.size()) {
      throw ConfigError("csv: row " + std::to_string(i) + " has " + std::to_string(records[i].size()) +
                        " fields, header has " + std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(records[i]));
  }
  return table;
}

// ---- Comparison ---------------------------------------------------------

std::string comparison_csv(const ComparisonReport& report) {
  std::string out = meta_line({report.tool_version, report.config_hash});
  out += join_row({"loss", "seed", "ok", "accuracy", "wer", "cer", "ece_word", "ece_char", "mean_confidence",
                   "confidence_std", "error"});
  for (const auto& r : report.rows) {
    out += join_row({r.loss, std::to_string(r.seed), r.ok ? "true" : "false", real_or_empty(r.ok, r.accuracy),
                     real_or_empty(r.ok, r.wer), real_or_empty(r.ok, r.cer), real_or_empty(r.ok, r.ece_word),
                     real_or_empty(r.ok, r.ece_char), real_or_empty(r.ok, r.mean_confidence),
                     real_or_empty(r.ok, r.confidence_std), r.error});
  }
  return out;
}

ComparisonReport parse_comparison_csv(std::string_view text) {
  const CsvTable t = parse_csv(text);
  for (auto name : kComparisonColumns) t.column(name);
  ComparisonReport report;
  if (t.meta) {
    report.tool_version = t.meta->tool_version;
    report.config_hash = t.meta->config_hash;
  }
  for (const auto& f : t.rows) {
    RunRow r;
    r.loss = f[t.column("loss")];
    r.seed = parse_u64_field(f[t.column("seed")], "seed");
    r.ok = parse_bool_field(f[t.column("ok")]);
    r.accuracy = real_field_or_zero(f[t.column("accuracy")]);
    r.wer = real_field_or_zero(f[t.column("wer")]);
    r.cer = real_field_or_zero(f[t.column("cer")]);
    r.ece_word = real_field_or_zero(f[t.column("ece_word")]);
    r.ece_char = real_field_or_zero(f[t.column("ece_char")]);
    r.mean_confidence = real_field_or_zero(f[t.column("mean_confidence")]);
    r.confidence_std = real_field_or_zero(f[t.column("confidence_std")]);
    r.error = f[t.column("error")];
    report.rows.push_back(std::move(r));
  }
  report.aggregates = aggregate_rows(report.rows);
  return report;
}

std::string comparison_json(const ComparisonReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    json row{{"loss", r.loss}, {"seed", r.seed}, {"ok", r.ok}};
    if (r.ok) {
      row["accuracy"] = r.accuracy;
      row["wer"] = r.wer;
      row["cer"] = r.cer;
      row["ece_word"] = r.ece_word;
      row["ece_char"] = r.ece_char;
      row["mean_confidence"] = r.mean_confidence;
      row["confidence_std"] = r.confidence_std;
    } else {
      row["error"] = r.error;
    }
    rows.push_back(std::move(row));
  }
  json aggs = json::array();
  for (const auto& a : report.aggregates) {
    aggs.push_back(json{{"loss", a.loss},
                        {"runs", a.runs},
                        {"accuracy", {{"mean", a.accuracy_mean}, {"std", a.accuracy_std}}},
                        {"wer", {{"mean", a.wer_mean}, {"std", a.wer_std}}},
                        {"cer", {{"mean", a.cer_mean}, {"std", a.cer_std}}},
                        {"ece_word", {{"mean", a.ece_word_mean}, {"std", a.ece_word_std}}},
                        {"ece_char", {{"mean", a.ece_char_mean}, {"std", a.ece_char_std}}},
                        {"mean_confidence", {{"mean", a.mean_confidence_mean}, {"std", a.mean_confidence_std}}},
                        {"confidence_std", {{"mean", a.confidence_std_mean}, {"std", a.confidence_std_std}}}});
  }
  json root = meta_json({report.tool_version, report.config_hash});
  root["rows"] = std::move(rows);
  root["aggregates"] = std::move(aggs);
  return root.dump(2) + "\n";
}

ComparisonReport parse_comparison_json(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("comparison.json: ") + e.what());
  }
  ComparisonReport report;
  try {
    report.tool_version = root.at("tool_version").get<std::string>();
    report.config_hash = root.at("config_hash").get<std::string>();
    for (const auto& j : root.at("rows")) {
      RunRow r;
      r.loss = j.at("loss").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.ok = j.at("ok").get<bool>();
      if (r.ok) {
        r.accuracy = j.at("accuracy").get<double>();
        r.wer = j.at("wer").get<double>();
        r.cer = j.at("cer").get<double>();
        r.ece_word = j.at("ece_word").get<double>();
        r.ece_char = j.at("ece_char").get<double>();
        r.mean_confidence = j.at("mean_confidence").get<double>();
        r.confidence_std = j.at("confidence_std").get<double>();
      } else {
        r.error = j.value("error", std::string());
      }
      report.rows.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("comparison.json: ") + e.what());
  }
  report.aggregates = aggregate_rows(report.rows);
  return report;
}

std::vector<ReliabilityRow> reliability_rows(const ReliabilityReport& report) {
  std::vector<ReliabilityRow> out;
  for (const auto& b : report.bins) {
    out.push_back({std::string(level_name(report.level)), b.low, b.high, b.mean_confidence(), b.accuracy(), b.count});
  }
  return out;
}

std::string reliability_csv(const ReliabilityReport& character, const ReliabilityReport& word, const ReportMeta& meta) {
  std::string out = meta_line(meta);
  out += "level,bin_low,bin_high,mean_conf,accuracy,count\n";
  for (const auto* rep : {&character, &word}) {
    for (const auto& r : reliability_rows(*rep)) {
      out += join_row({r.level, format_real(r.bin_low), format_real(r.bin_high), format_real(r.mean_conf),
                       format_real(r.accuracy), std::to_string(r.count)});
    }
  }
  return out;
}

std::vector<ReliabilityRow> parse_reliability_csv(std::string_view text) {
  const CsvTable t = parse_csv(text);
  const std::size_t level = t.column("level"), lo = t.column("bin_low"), hi = t.column("bin_high"),
                    conf = t.column("mean_conf"), acc = t.column("accuracy"), count = t.column("count");
  std::vector<ReliabilityRow> out;
  for (const auto& f : t.rows) {
    out.push_back({f[level], parse_real(f[lo]), parse_real(f[hi]), parse_real(f[conf]), parse_real(f[acc]),
                   static_cast<std::size_t>(parse_u64_field(f[count], "count"))});
  }
  return out;
}

std::string confidence_hist_csv(const std::vector<std::size_t>& counts, const ReportMeta& meta) {
  std::string out = meta_line(meta);
  out += "bin_low,bin_high,count\n";
  const auto n = static_cast<double>(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) {
    out += join_row({format_real(static_cast<double>(k) / n), format_real(static_cast<double>(k + 1) / n),
                     std::to_string(counts[k])});
  }
  return out;
}

void write_comparison_files(const ComparisonReport& report, const std::vector<std::string>& loss_names,
                            const std::filesystem::path& dir, const ReportFormats& formats) {
  std::filesystem::create_directories(dir);
  const ReportMeta meta{report.tool_version, report.config_hash};
  if (formats.json) write_file_atomic(dir / "comparison.json", comparison_json(report));
  if (formats.csv) write_file_atomic(dir / "comparison.csv", comparison_csv(report));
  for (std::size_t l = 0; l < loss_names.size(); ++l) {
    write_file_atomic(dir / ("reliability_" + loss_names[l] + ".csv"),
                      reliability_csv(report.char_reliability[l], report.word_reliability[l], meta));
    write_file_atomic(dir / ("confidence_hist_" + loss_names[l] + ".csv"),
                      confidence_hist_csv(report.confidence_hist[l], meta));
  }
}

// ---- Prior analysis -----------------------------------------------------

bool PriorAnalysisReport::any_failed() const {
  for (const auto& r : rows) {
    if (!r.ok) return true;
  }
  return false;
}

std::vector<PriorAggregate> aggregate_prior_rows(const std::vector<PriorSeedRow>& rows) {
  std::vector<PriorAggregate> out;
  for (PriorKind kind : {PriorKind::kTextPrior, PriorKind::kNcap}) {
    PriorAggregate a;
    a.kind = kind;
    double pw = 0.0, pc = 0.0;
    for (const auto& r : rows) {
      if (!r.ok || r.result.kind != kind) continue;
      ++a.runs;
      a.prior_cer_mean += r.result.prior_rates.cer;
      a.output_cer_mean += r.result.output_rates.cer;
      a.prior_wer_mean += r.result.prior_rates.wer;
      a.output_wer_mean += r.result.output_rates.wer;
      if (r.result.pearson_wer) {
        pw += *r.result.pearson_wer;
        ++a.pearson_wer_defined;
      }
      if (r.result.pearson_cer) {
        pc += *r.result.pearson_cer;
        ++a.pearson_cer_defined;
      }
    }
    if (a.runs > 0) {
      const auto n = static_cast<double>(a.runs);
      a.prior_cer_mean /= n;
      a.output_cer_mean /= n;
      a.prior_wer_mean /= n;
      a.output_wer_mean /= n;
    }
    if (a.pearson_wer_defined > 0) a.pearson_wer_mean = pw / static_cast<double>(a.pearson_wer_defined);
    if (a.pearson_cer_defined > 0) a.pearson_cer_mean = pc / static_cast<double>(a.pearson_cer_defined);
    out.push_back(a);
  }
  return out;
}

std::string prior_analysis_csv(const PriorAnalysisReport& report) {
  std::string out = meta_line(report.meta);
  out += "seed,prior,ok,prior_wer,prior_cer,output_wer,output_cer,pearson_wer,pearson_cer,null_reason,error\n";
  for (const auto& r : report.rows) {
    const auto& p = r.result;
    out += join_row({std::to_string(r.seed), std::string(prior_name(p.kind)), r.ok ? "true" : "false",
                     real_or_empty(r.ok, p.prior_rates.wer), real_or_empty(r.ok, p.prior_rates.cer),
                     real_or_empty(r.ok, p.output_rates.wer), real_or_empty(r.ok, p.output_rates.cer),
                     opt_field(p.pearson_wer), opt_field(p.pearson_cer), p.null_reason, r.error});
  }
  return out;
}

std::string prior_analysis_json(const PriorAnalysisReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    const auto& p = r.result;
    json row{{"seed", r.seed}, {"prior", std::string(prior_name(p.kind))}, {"ok", r.ok}};
    if (r.ok) {
      row["prior_wer"] = p.prior_rates.wer;
      row["prior_cer"] = p.prior_rates.cer;
      row["output_wer"] = p.output_rates.wer;
      row["output_cer"] = p.output_rates.cer;
      row["pearson_wer"] = optional_real(p.pearson_wer);
      row["pearson_cer"] = optional_real(p.pearson_cer);
      if (!p.null_reason.empty()) row["null_reason"] = p.null_reason;
    } else {
      row["error"] = r.error;
    }
    rows.push_back(std::move(row));
  }
  json aggs = json::array();
  for (const auto& a : report.aggregates) {
    aggs.push_back(json{{"prior", std::string(prior_name(a.kind))},
                        {"runs", a.runs},
                        {"prior_wer_mean", a.prior_wer_mean},
                        {"prior_cer_mean", a.prior_cer_mean},
                        {"output_wer_mean", a.output_wer_mean},
                        {"output_cer_mean", a.output_cer_mean},
                        {"pearson_wer_mean", optional_real(a.pearson_wer_mean)},
                        {"pearson_cer_mean", optional_real(a.pearson_cer_mean)},
                        {"pearson_wer_defined", a.pearson_wer_defined},
                        {"pearson_cer_defined", a.pearson_cer_defined}});
  }
  json root = meta_json(report.meta);
  root["corruption_fraction"] = report.corruption_fraction;
  root["rows"] = std::move(rows);
  root["aggregates"] = std::move(aggs);
  return root.dump(2) + "\n";
}

void write_prior_analysis_files(const PriorAnalysisReport& report, const std::filesystem::path& dir,
                                const ReportFormats& formats) {
  std::filesystem::create_directories(dir);
  if (formats.json) write_file_atomic(dir / "prior_analysis.json", prior_analysis_json(report));
  if (formats.csv) write_file_atomic(dir / "prior_analysis.csv", prior_analysis_csv(report));
}

}  // namespace ncap
