#include "ncap/experiment.hpp"

#include <charconv>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

namespace ncap {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

const json& require_object(const json& j, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  return j;
}

void read_count(const json& obj, const char* key, std::size_t& out, std::string_view where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned()) throw ConfigError(std::string(where) + "." + key + ": expected a non-negative integer");
  out = v.get<std::size_t>();
}

void read_u64(const json& obj, const char* key, std::uint64_t& out, std::string_view where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned()) throw ConfigError(std::string(where) + "." + key + ": expected a non-negative integer");
  out = v.get<std::uint64_t>();
}

void read_real(const json& obj, const char* key, double& out, std::string_view where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(std::string(where) + "." + key + ": expected a number");
  out = v.get<double>();
}

LossSpec parse_loss(const json& j, std::string_view where) {
  if (j.is_string()) return LossSpec{parse_loss_kind(j.get<std::string>())};
  require_object(j, where);
  reject_unknown(j, where, {"kind", "alpha", "beta", "tau", "epsilon_ls"});
  if (!j.contains("kind") || !j.at("kind").is_string()) throw ConfigError(std::string(where) + ": missing 'kind'");
  LossSpec spec{parse_loss_kind(j.at("kind").get<std::string>())};
  read_real(j, "alpha", spec.alpha, where);
  read_real(j, "beta", spec.beta, where);
  read_real(j, "tau", spec.tau, where);
  read_real(j, "epsilon_ls", spec.epsilon_ls, where);
  return spec;
}

json loss_json(const LossSpec& s) {
  return json{{"kind", s.name()}, {"alpha", s.alpha}, {"beta", s.beta}, {"tau", s.tau}, {"epsilon_ls", s.epsilon_ls}};
}

void parse_task(const json& j, TaskConfig& t) {
  constexpr std::string_view w = "task";
  require_object(j, w);
  reject_unknown(j, w,
                 {"alphabet_size", "sequence_length", "feature_dim", "hidden_dim", "embed_dim", "prior_dim",
                  "prototype_scale", "noise_sigma_hr", "noise_sigma_lr", "train_size", "test_size", "epochs",
                  "learning_rate", "batch_size", "n_bins", "seed", "teacher_loss"});
  read_count(j, "alphabet_size", t.alphabet_size, w);
  read_count(j, "sequence_length", t.sequence_length, w);
  read_count(j, "feature_dim", t.feature_dim, w);
  read_count(j, "hidden_dim", t.hidden_dim, w);
  read_count(j, "embed_dim", t.embed_dim, w);
  read_count(j, "prior_dim", t.prior_dim, w);
  read_real(j, "prototype_scale", t.prototype_scale, w);
  read_real(j, "noise_sigma_hr", t.noise_sigma_hr, w);
  read_real(j, "noise_sigma_lr", t.noise_sigma_lr, w);
  read_count(j, "train_size", t.train_size, w);
  read_count(j, "test_size", t.test_size, w);
  read_count(j, "epochs", t.epochs, w);
  read_real(j, "learning_rate", t.learning_rate, w);
  read_count(j, "batch_size", t.batch_size, w);
  read_count(j, "n_bins", t.n_bins, w);
  read_u64(j, "seed", t.seed, w);
  if (j.contains("teacher_loss")) t.teacher_loss = parse_loss(j.at("teacher_loss"), "task.teacher_loss");
}

json task_json(const TaskConfig& t) {
  return json{{"alphabet_size", t.alphabet_size},
              {"sequence_length", t.sequence_length},
              {"feature_dim", t.feature_dim},
              {"hidden_dim", t.hidden_dim},
              {"embed_dim", t.embed_dim},
              {"prior_dim", t.prior_dim},
              {"prototype_scale", t.prototype_scale},
              {"noise_sigma_hr", t.noise_sigma_hr},
              {"noise_sigma_lr", t.noise_sigma_lr},
              {"train_size", t.train_size},
              {"test_size", t.test_size},
              {"epochs", t.epochs},
              {"learning_rate", t.learning_rate},
              {"batch_size", t.batch_size},
              {"n_bins", t.n_bins},
              {"seed", t.seed},
              {"teacher_loss", loss_json(t.teacher_loss)}};
}

std::vector<std::uint64_t> seed_range(std::uint64_t n) {
  std::vector<std::uint64_t> out(n);
  for (std::uint64_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::uint64_t parse_u64(std::string_view s, std::string_view what) {
  s = trim(s);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError(std::string(what) + ": '" + std::string(s) + "' is not a non-negative integer");
  }
  return v;
}

}  // namespace

ExperimentConfig::ExperimentConfig() : seeds(seed_range(10)) {
  for (LossKind k : all_loss_kinds()) losses.push_back(LossSpec{k});
}

void ExperimentConfig::validate() const {
  task.validate();
  if (losses.empty()) throw ConfigError("config: at least one loss is required");
  for (const auto& l : losses) l.validate();
  if (seeds.empty()) throw ConfigError("config: seeds must be nonempty");
  if (output_dir.empty()) throw ConfigError("config: output_dir must be set");
  if (!formats.json && !formats.csv) throw ConfigError("config: report_formats must name json and/or csv");
  if (jobs == 0) throw ConfigError("config: jobs must be >= 1");
  if (!(gradcheck.step > 0.0)) throw ConfigError("config: gradcheck.step must be positive");
  if (gradcheck.instances == 0) throw ConfigError("config: gradcheck.instances must be >= 1");
  const double f = prior_analysis.corruption_fraction;
  if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("config: prior_analysis.corruption_fraction must lie in [0, 1]");
  if (!(prior_analysis.prior_tau > 0.0)) throw ConfigError("config: prior_analysis.prior_tau must be positive");
}

ExperimentConfig parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  require_object(root, "config");
  reject_unknown(root, "config",
                 {"task", "losses", "seeds", "output_dir", "report_formats", "jobs", "gradcheck", "prior_analysis"});

  ExperimentConfig c;
  if (root.contains("task")) parse_task(root.at("task"), c.task);
  if (root.contains("losses")) {
    const json& l = root.at("losses");
    if (!l.is_array()) throw ConfigError("config.losses: expected an array");
    c.losses.clear();
    for (std::size_t i = 0; i < l.size(); ++i) c.losses.push_back(parse_loss(l[i], "config.losses[" + std::to_string(i) + "]"));
  }
  if (root.contains("seeds")) {
    const json& s = root.at("seeds");
    if (s.is_number_unsigned()) {
      c.seeds = seed_range(s.get<std::uint64_t>());
    } else if (s.is_array()) {
      c.seeds.clear();
      for (const auto& v : s) {
        if (!v.is_number_unsigned()) throw ConfigError("config.seeds: entries must be non-negative integers");
        c.seeds.push_back(v.get<std::uint64_t>());
      }
    } else {
      throw ConfigError("config.seeds: expected a count or a list");
    }
  }
  if (root.contains("output_dir")) {
    if (!root.at("output_dir").is_string()) throw ConfigError("config.output_dir: expected a string");
    c.output_dir = root.at("output_dir").get<std::string>();
  }
  if (root.contains("report_formats")) {
    const json& f = root.at("report_formats");
    if (!f.is_array()) throw ConfigError("config.report_formats: expected an array");
    std::string joined;
    for (const auto& v : f) {
      if (!v.is_string()) throw ConfigError("config.report_formats: entries must be strings");
      if (!joined.empty()) joined += ',';
      joined += v.get<std::string>();
    }
    c.formats = parse_formats(joined);
  }
  read_count(root, "jobs", c.jobs, "config");
  if (root.contains("gradcheck")) {
    const json& g = require_object(root.at("gradcheck"), "config.gradcheck");
    reject_unknown(g, "config.gradcheck", {"step", "instances"});
    read_real(g, "step", c.gradcheck.step, "config.gradcheck");
    read_count(g, "instances", c.gradcheck.instances, "config.gradcheck");
  }
  if (root.contains("prior_analysis")) {
    const json& p = require_object(root.at("prior_analysis"), "config.prior_analysis");
    reject_unknown(p, "config.prior_analysis", {"corruption_fraction", "prior_tau"});
    read_real(p, "corruption_fraction", c.prior_analysis.corruption_fraction, "config.prior_analysis");
    read_real(p, "prior_tau", c.prior_analysis.prior_tau, "config.prior_analysis");
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string canonical_config(const ExperimentConfig& config) {
  json losses = json::array();
  for (const auto& l : config.losses) losses.push_back(loss_json(l));
  const json root{{"task", task_json(config.task)},
                  {"losses", losses},
                  {"seeds", config.seeds},
                  {"gradcheck", {{"step", config.gradcheck.step}, {"instances", config.gradcheck.instances}}},
                  {"prior_analysis",
                   {{"corruption_fraction", config.prior_analysis.corruption_fraction},
                    {"prior_tau", config.prior_analysis.prior_tau}}}};
  return root.dump();
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_config(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
    h >>= 4;
  }
  return out;
}

std::vector<std::uint64_t> parse_seed_spec(std::string_view text) {
  text = trim(text);
  if (text.empty()) throw ConfigError("--seeds: empty value");
  if (text.find(',') == std::string_view::npos) return seed_range(parse_u64(text, "--seeds"));
  std::vector<std::uint64_t> out;
  while (true) {
    const auto comma = text.find(',');
    out.push_back(parse_u64(text.substr(0, comma), "--seeds"));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

ReportFormats parse_formats(std::string_view text) {
  ReportFormats f{false, false};
  while (true) {
    const auto comma = text.find(',');
    const std::string_view item = trim(text.substr(0, comma));
    if (item == "json") {
      f.json = true;
    } else if (item == "csv") {
      f.csv = true;
    } else {
      throw ConfigError("report format '" + std::string(item) + "' is not one of json, csv");
    }
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return f;
}

}  // namespace ncap
