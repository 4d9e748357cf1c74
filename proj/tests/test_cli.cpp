#include <doctest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "ncap/checkpoint.hpp"
#include "ncap/commands.hpp"
#include "ncap/experiment.hpp"
#include "ncap/fileio.hpp"
#include "ncap/report.hpp"
#include "oracles.hpp"

using namespace ncap;
namespace fs = std::filesystem;

namespace {

const char* kSmallTask = R"({
  "alphabet_size": 5, "sequence_length": 4, "feature_dim": 8, "hidden_dim": 12, "embed_dim": 8,
  "prior_dim": 4, "train_size": 60, "test_size": 50, "epochs": 5
})";

std::string small_config_json(const std::string& extra = "") {
  return std::string("{\"task\": ") + kSmallTask + ", \"losses\": [\"none\", \"ce\", \"ce_softened_kl\"], \"seeds\": 2" +
         extra + "}";
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("ncap_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path write(const std::string& name, const std::string& text) const {
    write_file_atomic(path / name, text);
    return path / name;
  }
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(NCAP_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.values()[i]) != std::bit_cast<std::uint64_t>(b.values()[i])) return false;
  }
  return true;
}

}  // namespace

// ---- configuration --------------------------------------------------------

TEST_CASE("config parsing") {
  const ExperimentConfig defaults;
  CHECK(defaults.losses.size() == 7);
  CHECK(defaults.seeds.size() == 10);

  const ExperimentConfig c = parse_config(R"({
    "task": {"alphabet_size": 6, "noise_sigma_lr": 0.5, "teacher_loss": {"kind": "ce_ls", "epsilon_ls": 0.2}},
    "losses": ["ce", {"kind": "ce_softened_kl", "alpha": 0.25, "tau": 2}],
    "seeds": [3, 7],
    "output_dir": "elsewhere",
    "report_formats": ["csv"],
    "jobs": 2,
    "gradcheck": {"step": 1e-6, "instances": 3},
    "prior_analysis": {"corruption_fraction": 0.5}
  })");
  CHECK(c.task.alphabet_size == 6);
  CHECK(c.task.noise_sigma_lr == 0.5);
  CHECK(c.task.teacher_loss.kind == LossKind::kCeLs);
  CHECK(c.task.teacher_loss.epsilon_ls == 0.2);
  REQUIRE(c.losses.size() == 2);
  CHECK(c.losses[1].alpha == 0.25);
  CHECK(c.losses[1].tau == 2.0);
  CHECK(c.losses[1].beta == 0.7);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 7});
  CHECK(c.output_dir == "elsewhere");
  CHECK_FALSE(c.formats.json);
  CHECK(c.formats.csv);
  CHECK(c.jobs == 2);
  CHECK(c.gradcheck.step == 1e-6);
  CHECK(c.gradcheck.instances == 3);
  CHECK(c.prior_analysis.corruption_fraction == 0.5);
  CHECK(parse_config(R"({"seeds": 4})").seeds == std::vector<std::uint64_t>{0, 1, 2, 3});
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_config("{"), ConfigError);
  CHECK_THROWS_AS(parse_config("[]"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"lossess": []})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"task": {"alphabet": 5}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"task": {"alphabet_size": "five"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"task": {"alphabet_size": -5}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"losses": ["softmax"]})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"losses": [{"alpha": 0.5}]})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"seeds": "many"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"report_formats": ["xml"]})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"gradcheck": {"h": 1}})"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/ncap.json"), ConfigError);

  ExperimentConfig c;
  c.jobs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.seeds.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.prior_analysis.corruption_fraction = 2.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.losses = {LossSpec{LossKind::kCeSoftenedKl}};
  c.losses[0].alpha = -0.5;
  CHECK_THROWS(c.validate());
}

TEST_CASE("seed and format specs") {
  CHECK(parse_seed_spec("3") == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(parse_seed_spec("1,5,7") == std::vector<std::uint64_t>{1, 5, 7});
  CHECK_THROWS_AS(parse_seed_spec(""), ConfigError);
  CHECK_THROWS_AS(parse_seed_spec("1,,2"), ConfigError);
  CHECK_THROWS_AS(parse_seed_spec("x"), ConfigError);
  CHECK(parse_formats("json").json);
  CHECK_FALSE(parse_formats("json").csv);
  CHECK(parse_formats("csv,json").csv);
  CHECK_THROWS_AS(parse_formats("pdf"), ConfigError);
  CHECK_THROWS_AS(parse_formats(""), ConfigError);
}

TEST_CASE("config hash covers results, not output placement") {
  const ExperimentConfig a = parse_config(small_config_json());
  ExperimentConfig b = a;
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.output_dir = "x";
  b.jobs = 4;
  b.formats.csv = false;
  CHECK(config_hash(a) == config_hash(b));
  b.task.epochs += 1;
  CHECK(config_hash(a) != config_hash(b));
  ExperimentConfig c = a;
  c.losses[2].beta = 0.71;
  CHECK(config_hash(a) != config_hash(c));
  ExperimentConfig d = a;
  d.seeds = {0, 2};
  CHECK(config_hash(a) != config_hash(d));
  // the canonical form re-parses to the same hash
  CHECK(config_hash(parse_config(canonical_config(a))) == config_hash(a));
}

TEST_CASE("resolve_config applies overrides") {
  TempDir dir;
  const fs::path cfg = dir.write("c.json", small_config_json());
  CliOverrides o;
  o.config = cfg;
  o.out = dir.path / "o";
  o.seeds = std::vector<std::uint64_t>{4};
  o.jobs = 3;
  const ExperimentConfig c = resolve_config(o);
  CHECK(c.seeds == std::vector<std::uint64_t>{4});
  CHECK(c.output_dir == dir.path / "o");
  CHECK(c.jobs == 3);
  CHECK(c.task.alphabet_size == 5);
}

// ---- checkpoints ----------------------------------------------------------

TEST_CASE("checkpoint round trip is bitwise, special values included") {
  Checkpoint ck{"custom", {}};
  Matrix m(2, 3);
  m(0, 0) = std::numeric_limits<double>::quiet_NaN();
  m(0, 1) = std::numeric_limits<double>::infinity();
  m(0, 2) = -std::numeric_limits<double>::infinity();
  m(1, 0) = -0.0;
  m(1, 1) = std::numeric_limits<double>::denorm_min();
  m(1, 2) = 0.1;
  ck.tensors.push_back({"special", m});
  ck.tensors.push_back({"empty", Matrix()});
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  CHECK(back.kind == "custom");
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensors[0].name == "special");
  CHECK(bitwise_equal(back.tensors[0].value, m));
  CHECK(back.tensors[1].value.empty());
  CHECK(encode_checkpoint(back) == encode_checkpoint(ck));
}

TEST_CASE("recognizer and adapter checkpoints") {
  TempDir dir;
  TaskConfig cfg;
  const RecognizerParams p = initial_recognizer(cfg, Domain::kLr);
  save_recognizer(p, dir.path / "r.ckpt");
  CHECK(load_recognizer(dir.path / "r.ckpt", cfg) == p);
  for (const auto& e : fs::directory_iterator(dir.path)) CHECK(e.path().filename().string().find(".tmp") == std::string::npos);

  Rng rng(3);
  const AdapterParams a = init_adapter(16, 8, true, rng);
  const AdapterParams b = adapter_from_checkpoint(decode_checkpoint(encode_checkpoint(to_checkpoint(a))), 16, 8);
  CHECK(b.w1 == a.w1);
  CHECK(b.w2 == a.w2);
  CHECK(b.slope1 == a.slope1);
  REQUIRE(b.has_bias());
  CHECK(*b.b2 == *a.b2);

  CHECK_THROWS_AS(adapter_from_checkpoint(to_checkpoint(p), 16, 8), CheckpointError);
  CHECK_THROWS_AS(load_recognizer(dir.path / "missing.ckpt", cfg), CheckpointError);
}

TEST_CASE("checkpoint shape mismatch names the tensor") {
  TaskConfig cfg;
  const Checkpoint ck = to_checkpoint(initial_recognizer(cfg, Domain::kLr));
  TaskConfig other = cfg;
  other.hidden_dim = 31;
  try {
    recognizer_from_checkpoint(ck, other);
    FAIL("expected a shape error");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("'w_in'") != std::string::npos);
  }
  Checkpoint missing = ck;
  missing.tensors.pop_back();
  CHECK_THROWS_AS(recognizer_from_checkpoint(missing, cfg), CheckpointError);
}

TEST_CASE("damaged checkpoints are rejected whole") {
  const std::string bytes = encode_checkpoint(to_checkpoint(initial_recognizer(TaskConfig{}, Domain::kHr)));
  for (std::size_t n = 0; n < bytes.size(); n += (n < 64 ? 1 : 97)) {
    CAPTURE(n);
    CHECK_THROWS_AS(decode_checkpoint(std::string_view(bytes).substr(0, n)), CheckpointError);
  }
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), CheckpointError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), CheckpointError);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), CheckpointError);
}

// ---- reports --------------------------------------------------------------

TEST_CASE("real formatting round trips") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal(0.0, 1.0) * std::pow(10.0, rng.uniform(-300.0, 300.0));
    CHECK(parse_real(format_real(v)) == v);
  }
  CHECK(std::isnan(parse_real(format_real(std::numeric_limits<double>::quiet_NaN()))));
  CHECK(parse_real(format_real(-std::numeric_limits<double>::infinity())) == -std::numeric_limits<double>::infinity());
  CHECK(parse_real("0.1") == 0.1);
  CHECK_THROWS_AS(parse_real("0.1x"), ConfigError);
  CHECK_THROWS_AS(parse_real(""), ConfigError);
}

TEST_CASE("csv quoting round trips awkward fields") {
  const std::string text = "# ncap 9.9 config_hash=abc\na,b\n" + csv_escape("x,y") + "," + csv_escape("say \"hi\"\nbye") +
                           "\nplain,\n";
  const CsvTable t = parse_csv(text);
  REQUIRE(t.meta.has_value());
  CHECK(t.meta->tool_version == "9.9");
  CHECK(t.meta->config_hash == "abc");
  CHECK(t.header == std::vector<std::string>{"a", "b"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][0] == "x,y");
  CHECK(t.rows[0][1] == "say \"hi\"\nbye");
  CHECK(t.rows[1][1].empty());
  CHECK(t.column("b") == 1);
  CHECK_THROWS_AS(t.column("c"), ConfigError);
  CHECK_THROWS_AS(parse_csv("a\n\"open"), ConfigError);
}

TEST_CASE("comparison reports round trip through csv and json") {
  ComparisonReport r;
  r.config_hash = "0123456789abcdef";
  r.tool_version = "0.1.0";
  RunRow ok{"ce", 0, true, "", 0.9, 0.3, 0.1, 0.05, 0.02, 0.95, 0.1};
  RunRow ok2{"ce", 1, true, "", 1.0 / 3.0, 0.25, 0.125, 0.0, 0.5, 0.7, 0.2};
  RunRow bad{"kl_mae", 0, false, "teacher: diverged, \"badly\"\nat epoch 3", 0, 0, 0, 0, 0, 0, 0};
  r.rows = {ok, ok2, bad};
  r.aggregates = aggregate_rows(r.rows);

  for (const ComparisonReport& back : {parse_comparison_csv(comparison_csv(r)), parse_comparison_json(comparison_json(r))}) {
    CHECK(back.config_hash == r.config_hash);
    CHECK(back.tool_version == r.tool_version);
    REQUIRE(back.rows.size() == 3);
    CHECK(back.rows[1].accuracy == ok2.accuracy);
    CHECK(back.rows[1].confidence_std == ok2.confidence_std);
    CHECK_FALSE(back.rows[2].ok);
    CHECK(back.rows[2].error == bad.error);
    REQUIRE(back.aggregates.size() == r.aggregates.size());
    CHECK(back.aggregates[0].accuracy_mean == r.aggregates[0].accuracy_mean);
    CHECK(back.any_failed());
  }
  // failed rows leave their metric cells empty
  const CsvTable t = parse_csv(comparison_csv(r));
  CHECK(t.rows[2][t.column("accuracy")].empty());
}

TEST_CASE("reliability csv round trip") {
  const std::vector<double> conf{0.15, 0.95, 0.5, 0.55};
  const bool ok_flags[] = {false, true, true, false};
  const std::span<const bool> ok(ok_flags);
  const ReliabilityReport ch = reliability(conf, ok, 4, ReliabilityLevel::kCharacter);
  const ReliabilityReport wd = reliability(conf, ok, 4, ReliabilityLevel::kWord);
  const auto rows = parse_reliability_csv(reliability_csv(ch, wd, ReportMeta{"0.1.0", "h"}));
  auto expected = reliability_rows(ch);
  const auto word_rows = reliability_rows(wd);
  expected.insert(expected.end(), word_rows.begin(), word_rows.end());
  CHECK(rows == expected);
}

// ---- commands -------------------------------------------------------------

TEST_CASE("exit codes for usage errors") {
  TempDir dir;
  CHECK(run_cli("") == kExitUsage);
  CHECK(run_cli("frobnicate") == kExitUsage);
  CHECK(run_cli("compare --bogus") == kExitUsage);
  CHECK(run_cli("compare --jobs 0") == kExitUsage);
  CHECK(run_cli("compare --seeds x") == kExitUsage);
  CHECK(run_cli("compare --format pdf") == kExitUsage);
  CHECK(run_cli("compare --config " + (dir.path / "missing.json").string()) == kExitUsage);
  const fs::path broken = dir.write("broken.json", "{\"task\": {\"embed_dim\": 7}}");
  CHECK(run_cli("compare --config " + broken.string() + " --out " + (dir.path / "o").string()) == kExitUsage);
  CHECK(run_cli("report --out " + (dir.path / "empty").string()) == kExitUsage);
  CHECK(run_cli("--version") == kExitOk);
  CHECK(run_cli("--help") == kExitOk);
}

TEST_CASE("compare writes a complete, reproducible report set") {
  TempDir dir;
  const fs::path cfg = dir.write("c.json", small_config_json());
  const fs::path out1 = dir.path / "run1", out2 = dir.path / "run2";
  CHECK(run_cli("compare --config " + cfg.string() + " --out " + out1.string()) == kExitOk);
  CHECK(run_cli("compare --config " + cfg.string() + " --out " + out2.string() + " --jobs 2") == kExitOk);

  const std::vector<std::string> expected{"comparison.csv",
                                          "comparison.json",
                                          "confidence_hist_ce.csv",
                                          "confidence_hist_ce_softened_kl.csv",
                                          "confidence_hist_none.csv",
                                          "reliability_ce.csv",
                                          "reliability_ce_softened_kl.csv",
                                          "reliability_none.csv"};
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(out1)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  CHECK(names == expected);
  for (const auto& n : expected) CHECK(read_file(out1 / n) == read_file(out2 / n));

  const ComparisonReport r = parse_comparison_json(read_file(out1 / "comparison.json"));
  CHECK(r.config_hash == config_hash(parse_config(small_config_json())));
  CHECK(r.tool_version == std::string(kToolVersion));
  CHECK(r.rows.size() == 6);
  CHECK(read_file(out1 / "comparison.csv").rfind("# ncap " + std::string(kToolVersion) + " config_hash=" + r.config_hash, 0) == 0);

  SUBCASE("the none variant reports its untrained initialization") {
    const ExperimentConfig c = parse_config(small_config_json());
    TaskConfig rep = c.task;
    rep.seed = replicate_seed(c.task.seed, 0);
    const auto test = gen_dataset(rep, Split::kTest, Domain::kLr);
    CHECK(r.rows[0].loss == "none");
    CHECK(r.rows[0].accuracy == evaluate_recognizer(initial_recognizer(rep, Domain::kLr), test, rep.n_bins).accuracy);
  }

  SUBCASE("report re-aggregates from either file") {
    const std::string before = read_file(out1 / "comparison.json");
    CHECK(run_cli("report --out " + out1.string()) == kExitOk);
    CHECK(read_file(out1 / "comparison.json") == before);
    fs::remove(out1 / "comparison.json");
    CHECK(run_cli("report --out " + out1.string()) == kExitOk);
    CHECK(read_file(out1 / "comparison.json") == before);
  }

  SUBCASE("format selection") {
    const fs::path only_csv = dir.path / "csv";
    CHECK(run_cli("compare --config " + cfg.string() + " --out " + only_csv.string() + " --format csv --seeds 1") ==
          kExitOk);
    CHECK(fs::exists(only_csv / "comparison.csv"));
    CHECK_FALSE(fs::exists(only_csv / "comparison.json"));
  }
}

TEST_CASE("a diverging run is a partial failure") {
  TempDir dir;
  const fs::path cfg = dir.write("c.json", std::string("{\"task\": {\"alphabet_size\": 5, \"sequence_length\": 4, "
                                                       "\"feature_dim\": 8, \"hidden_dim\": 12, \"embed_dim\": 8, "
                                                       "\"prior_dim\": 4, \"train_size\": 60, \"test_size\": 50, "
                                                       "\"epochs\": 5, \"learning_rate\": 1e6}, "
                                                       "\"losses\": [\"none\", \"ce\"], \"seeds\": 1}"));
  const fs::path out = dir.path / "o";
  CHECK(run_cli("compare --config " + cfg.string() + " --out " + out.string()) == kExitPartial);
  const ComparisonReport r = parse_comparison_json(read_file(out / "comparison.json"));
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].ok);
  CHECK_FALSE(r.rows[1].ok);
  CHECK(r.rows[1].error.find("diverged") != std::string::npos);
}

TEST_CASE("duplicate loss names are a configuration error") {
  ExperimentConfig c = parse_config(small_config_json());
  c.losses.push_back(LossSpec{LossKind::kCe});
  CHECK_THROWS_AS(run_compare(c), ConfigError);
}

TEST_CASE("gradcheck and prior-analysis commands") {
  TempDir dir;
  const fs::path cfg =
      dir.write("c.json", std::string("{\"task\": ") + kSmallTask + ", \"seeds\": 2, \"gradcheck\": {\"instances\": 2}}");
  std::ostringstream out, err;
  CliOverrides o;
  o.config = cfg;
  o.out = dir.path / "o";
  CHECK(cmd_gradcheck(o, out, err) == kExitOk);
  CHECK(out.str().find("ncap_adapter") != std::string::npos);
  CHECK(cmd_prior_analysis(o, out, err) == kExitOk);
  CHECK(fs::exists(dir.path / "o" / "prior_analysis.json"));
  CHECK(fs::exists(dir.path / "o" / "prior_analysis.csv"));
  const CsvTable t = parse_csv(read_file(dir.path / "o" / "prior_analysis.csv"));
  CHECK(t.rows.size() == 4);

  const fs::path wide = dir.write("w.json", std::string("{\"task\": ") + kSmallTask + ", \"gradcheck\": {\"step\": 1e-2, \"instances\": 1}}");
  o.config = wide;
  std::ostringstream out2, err2;
  cmd_gradcheck(o, out2, err2);
  CHECK(err2.str().find("warning") != std::string::npos);
}
