#include "ctxlens/cli.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace ctxlens;
using namespace ctxlens::cli;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() / ("ctxlens_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return "<missing " + p.string() + ">";
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

RunConfig config(const fs::path& out, const std::string& backend = "mock:needle") {
  RunConfig c;
  c.backend = backend;
  c.out = out;
  c.seed = 17;
  return c;
}

template <class F>
int guarded(F&& fn, std::string* err_text = nullptr) {
  std::ostringstream err;
  const int rc = run_guarded(std::forward<F>(fn), err);
  if (err_text) *err_text = err.str();
  return rc;
}

/// Key/value probes at the given key distances; 256 tokens over a 1000-token vocabulary.
fs::path synth_kv(const fs::path& dir, const std::string& mix, std::uint64_t seed = 5) {
  auto c = config(dir);
  c.seed = seed;
  SynthOptions o;
  o.mix = parse_mix(mix);
  EXPECT_EQ(cmd_synth(c, o), 0);
  return dir / "samples.jsonl";
}

std::vector<std::string> files_in(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

void expect_same_tree(const fs::path& a, const fs::path& b) {
  const auto fa = files_in(a);
  ASSERT_EQ(fa, files_in(b));
  ASSERT_FALSE(fa.empty());
  for (const auto& f : fa) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

fs::path write_prompts(const fs::path& dir) {
  const auto p = dir / "prompts.jsonl";
  // key 999 at distance 40: the long-context answer is 17, the local guess 998
  std::string toks;
  for (int i = 0; i < 60; ++i) toks += (i ? "," : "") + std::to_string(i == 20 ? 999 : i == 21 ? 17 : 100 + i);
  spit(p, "{\"id\":\"p0\",\"tokens\":[" + toks + "],\"gold\":\"17\"}\n"
          "{\"id\":\"p1\",\"tokens\":[" + toks + "]}\n");
  return p;
}

}  // namespace

TEST(Helpers, ParseMixAndLists) {
  EXPECT_EQ(parse_mix("10:80,100:20"), (std::vector<std::pair<std::size_t, std::size_t>>{{10, 80}, {100, 20}}));
  EXPECT_THROW(parse_mix("10"), ConfigError);
  EXPECT_THROW(parse_mix("10:x"), ConfigError);
  EXPECT_THROW(parse_mix("10:5,"), ConfigError);
  EXPECT_EQ(split_list("a,b"), (std::vector<std::string>{"a", "b"}));
  EXPECT_TRUE(split_list("").empty());
  EXPECT_TRUE(std::isinf(parse_real("inf", "x")));
  EXPECT_THROW(parse_real("0.5x", "x"), ConfigError);
  EXPECT_EQ(num(0.25), "0.25");
  EXPECT_EQ(num(-INFINITY), "-inf");
}

TEST(Helpers, BackendFromEnvironment) {
  RunConfig c;
  ::unsetenv(kBackendEnv);
  EXPECT_THROW(resolve_backend_spec(c), ConfigError);
  ::setenv(kBackendEnv, "mock:needle", 1);
  EXPECT_EQ(resolve_backend_spec(c), "mock:needle");
  ::setenv(kBackendEnv, "http://localhost:8000", 1);
  EXPECT_EQ(resolve_backend_spec(c), "http://localhost:8000");
  ::setenv(kBackendEnv, "localhost:8000", 1);
  EXPECT_EQ(resolve_backend_spec(c), "http:localhost:8000");
  c.backend = "mock:planted:d=40,answer=5,p=0.9";
  EXPECT_EQ(resolve_backend_spec(c), c.backend);
  ::unsetenv(kBackendEnv);
}

TEST(Helpers, RunConfigValidation) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tau = 0.9;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.strategy = "beam:3";
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.lambda = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.gamma = INFINITY;
  EXPECT_NO_THROW(c.validate());
}

TEST(Synth, KeyValueLabelsAndSummary) {
  TempDir dir;
  const auto samples = synth_kv(dir.path(), "10:3,100:2");
  const auto rows = read_jsonl(samples);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0]["label"], "short");
  EXPECT_EQ(rows[4]["label"], "long");
  EXPECT_EQ(rows[0]["schema"], "ctxlens/1");
  const auto s = sample_from_json(rows[0]);
  EXPECT_EQ(s.tokens[256 - 10], 999);
  const auto summary = read_report(dir / "synth_summary.json");
  EXPECT_EQ(summary["n_short"], 3);
  EXPECT_EQ(summary["n_long"], 2);
}

TEST(Synth, TextKindsAndErrors) {
  TempDir dir;
  auto c = config(dir.path());
  SynthOptions o;
  o.kind = "niah";
  o.mix = {{20, 1}, {200, 1}};
  ASSERT_EQ(cmd_synth(c, o), 0);
  auto rows = read_jsonl(dir / "samples.jsonl");
  EXPECT_EQ(rows[0]["label"], "short");
  EXPECT_EQ(rows[1]["label"], "long");
  EXPECT_EQ(rows[0]["answer_text"].get<std::string>().size(), 6u);
  o.kind = "longeval";
  o.mix = {{1, 1}, {50, 1}};
  ASSERT_EQ(cmd_synth(c, o), 0);
  rows = read_jsonl(dir / "samples.jsonl");
  EXPECT_EQ(rows[0]["label"], "short");
  EXPECT_EQ(rows[1]["label"], "long");
  o.kind = "essay";
  EXPECT_EQ(guarded([&] { return cmd_synth(c, o); }), 1);
  o.kind = "longeval";
  o.mix = {{51, 1}};
  EXPECT_EQ(guarded([&] { return cmd_synth(c, o); }), 1);
  o.mix.clear();
  EXPECT_EQ(guarded([&] { return cmd_synth(c, o); }), 1);
}

TEST(Mcl, EightyTwentyCorpusGivesExactShare) {
  TempDir dir;
  const auto samples = synth_kv(dir.path(), "10:80,100:20");
  MclOptions o;
  o.input.samples = samples;
  ASSERT_EQ(cmd_mcl(config(dir / "run"), o), 0);
  const auto summary = read_report(dir / "run" / "summary.json");
  EXPECT_EQ(summary["schema"], "ctxlens/1");
  EXPECT_EQ(summary["n_resolved"], 100);
  EXPECT_EQ(summary["share_le_32"].get<double>(), 0.8);
  EXPECT_EQ(summary["share_le_96"].get<double>(), 0.8);
  // distance 100 resolves at the first grid point >= 100 on the step-16 grid
  EXPECT_EQ(slurp(dir / "run" / "histogram.csv"), "ell,count\n32,80\n112,20\n");
  const auto rows = read_jsonl(dir / "run" / "mcl.jsonl");
  ASSERT_EQ(rows.size(), 100u);
  EXPECT_EQ(rows[0]["length"], 32);
  EXPECT_EQ(rows[99]["length"], 112);
  EXPECT_EQ(rows[0]["seq_id"], sample_from_json(read_jsonl(samples)[0]).seq_id);
}

TEST(Mcl, ByteIdenticalAcrossRunsAndWorkerCounts) {
  TempDir dir;
  const auto samples = synth_kv(dir.path(), "10:20,40:10,200:10");
  MclOptions o;
  o.input.samples = samples;
  auto a = config(dir / "a");
  auto b = config(dir / "b");
  b.parallel = 1;
  ASSERT_EQ(cmd_mcl(a, o), 0);
  ASSERT_EQ(cmd_mcl(b, o), 0);
  expect_same_tree(dir / "a", dir / "b");
}

TEST(Mcl, CorpusInput) {
  TempDir dir;
  // 1000 copies of token 5; the planted mock predicts 5 once 40 tokens are visible
  std::string text;
  for (int i = 0; i < 1000; ++i) text += "5 ";
  spit(dir / "corpus.jsonl", "{\"id\":\"d1\",\"text\":\"" + text + "\"}\n{\"id\":\"d2\"}\n");
  MclOptions o;
  o.input.corpus = dir / "corpus.jsonl";
  o.input.n_per_bucket = 2;
  auto c = config(dir / "run", "mock:planted:d=40,answer=5,p=0.9");
  ASSERT_EQ(cmd_mcl(c, o), 0);
  const auto summary = read_report(dir / "run" / "summary.json");
  EXPECT_EQ(summary["n_resolved"], 20);
  EXPECT_EQ(slurp(dir / "run" / "histogram.csv"), "ell,count\n48,20\n");
  ASSERT_EQ(summary["warnings"].size(), 1u);
  const auto first = summary["warnings"][0].get<std::string>();
  EXPECT_NE(first.find("corpus line 2"), std::string::npos) << first;
  const auto rows = read_jsonl(dir / "run" / "mcl.jsonl");
  EXPECT_EQ(rows[0]["seq_id"], "d1:0:0");
  EXPECT_EQ(rows[19]["seq_id"], "d1:9:1");
}

TEST(Mcl, EmptyCorpusAndMissingInputsFail) {
  TempDir dir;
  spit(dir / "empty.jsonl", "");
  MclOptions o;
  o.input.corpus = dir / "empty.jsonl";
  std::string err;
  EXPECT_EQ(guarded([&] { return cmd_mcl(config(dir / "run"), o); }, &err), 3);
  EXPECT_NE(err.find("no documents"), std::string::npos) << err;
  o.input.corpus = dir / "absent.jsonl";
  EXPECT_EQ(guarded([&] { return cmd_mcl(config(dir / "run"), o); }), 1);
  o.input.corpus.clear();
  EXPECT_EQ(guarded([&] { return cmd_mcl(config(dir / "run"), o); }), 1);
  spit(dir / "nosamples.jsonl", "\n");
  o.input.samples = dir / "nosamples.jsonl";
  EXPECT_EQ(guarded([&] { return cmd_mcl(config(dir / "run"), o); }), 3);
}

TEST(Mcl, FailureFlushesEarlierRecordsOnly) {
  TempDir dir;
  const auto samples = synth_kv(dir.path(), "10:12");
  auto rows = read_jsonl(samples);
  // token 5000 lies outside the mock's 1000-token vocabulary
  rows[7]["tokens"][3] = 5000;
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  spit(dir / "bad.jsonl", text);
  MclOptions o;
  o.input.samples = dir / "bad.jsonl";
  std::string err;
  EXPECT_EQ(guarded([&] { return cmd_mcl(config(dir / "run"), o); }, &err), 3);
  EXPECT_NE(err.find(rows[7]["seq_id"].get<std::string>()), std::string::npos) << err;
  const auto written = read_jsonl(dir / "run" / "mcl.jsonl");
  ASSERT_EQ(written.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(written[i]["seq_id"], rows[i]["seq_id"]);
}

TEST(Damcl, TwoStrategiesTimesTwoThresholdsGiveFourHistograms) {
  TempDir dir;
  const auto samples = synth_kv(dir.path(), "10:5,100:5");
  DamclOptions o;
  o.input.samples = samples;
  o.strategies = {"nucleus:0.9", "greedy"};
  auto c = config(dir / "run");
  c.epsilons = {0.1, 0.2};
  ASSERT_EQ(cmd_damcl(c, o), 0);
  std::size_t histograms = 0;
  for (const auto& f : files_in(dir / "run")) histograms += f.starts_with("histogram_") && f.ends_with(".csv");
  EXPECT_EQ(histograms, 4u);
  EXPECT_TRUE(fs::exists(dir / "run" / "histogram_nucleus-0.9_eps0.1.csv"));
  const auto summary = read_report(dir / "run" / "summary.json");
  ASSERT_EQ(summary["runs"].size(), 4u);
  EXPECT_EQ(summary["runs"][3]["strategy"], "greedy");
  EXPECT_EQ(summary["runs"][3]["epsilon"], 0.2);
}

TEST(Damcl, PercentileGridOnNeedleProbes) {
  TempDir dir;
  const auto samples = synth_kv(dir.path(), "10:3,100:3");
  DamclOptions o;
  o.input.samples = samples;
  auto c = config(dir / "run");
  c.grid = "percentile";
  c.epsilons = {0.1};
  ASSERT_EQ(cmd_damcl(c, o), 0);
  // |s| = 256: the key at distance 10 is inside the 10% prefix (25 tokens),
  // distance 100 first fits in the 40% prefix (102 tokens)
  const auto rows = read_jsonl(dir / "run" / "damcl_nucleus-0.9_eps0.1.jsonl");
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0]["length"], 26);
  EXPECT_EQ(rows[5]["length"], 103);
}

TEST(Damcl, InvalidMetricIsUsageError) {
  TempDir dir;
  const auto samples = synth_kv(dir.path(), "10:2");
  DamclOptions o;
  o.input.samples = samples;
  o.metric = "cosine";
  EXPECT_EQ(guarded([&] { return cmd_damcl(config(dir / "run"), o); }), 1);
}

TEST(Detect, PlantedSuiteIsPerfectlySeparated) {
  TempDir dir;
  const auto samples = synth_kv(dir.path(), "10:30,200:30");
  DetectOptions o;
  o.input.samples = samples;
  o.oracle = "planted";
  o.tau_sweep = {0.0, 0.6};
  ASSERT_EQ(cmd_detect(config(dir / "run"), o), 0);
  const auto summary = read_report(dir / "run" / "summary.json");
  EXPECT_EQ(summary["auc"], 1.0);
  EXPECT_EQ(summary["youden"]["J"], 1.0);
  EXPECT_EQ(summary["confusion"]["accuracy"], 1.0);
  EXPECT_EQ(summary["n_scored"], 60);
  const auto csv = slurp(dir / "run" / "tau_sweep.csv");
  EXPECT_TRUE(csv.starts_with("tau,tp,fp,tn,fn,accuracy,tpr,fpr\n0,30,30,0,0,0.5,1,1\n0.6,30,0,30,0,1,1,0\n")) << csv;
  const auto rows = read_jsonl(dir / "run" / "detect.jsonl");
  EXPECT_EQ(rows[0]["lsds"], 0.0);
  EXPECT_NEAR(rows[59]["lsds"].get<double>(), std::sqrt(std::log(2.0)), 1e-12);
}

TEST(Detect, MclOracleAgreesOnNeedleProbes) {
  TempDir dir;
  const auto samples = synth_kv(dir.path(), "10:10,200:10");
  DetectOptions o;
  o.input.samples = samples;
  ASSERT_EQ(cmd_detect(config(dir / "run"), o), 0);
  const auto summary = read_report(dir / "run" / "summary.json");
  EXPECT_EQ(summary["oracle_kind"], "mcl");
  EXPECT_EQ(summary["auc"], 1.0);
}

TEST(Detect, ByteIdenticalAcrossRuns) {
  TempDir dir;
  const auto samples = synth_kv(dir.path(), "10:15,50:15");
  DetectOptions o;
  o.input.samples = samples;
  o.oracle = "lsd_lcl";
  ASSERT_EQ(cmd_detect(config(dir / "a"), o), 0);
  ASSERT_EQ(cmd_detect(config(dir / "b"), o), 0);
  expect_same_tree(dir / "a", dir / "b");
}

TEST(Detect, MissingOracleLabelsAndSingleClass) {
  TempDir dir;
  const auto samples = synth_kv(dir.path(), "10:4");
  auto rows = read_jsonl(samples);
  rows[2].erase("label");
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  spit(dir / "unlabelled.jsonl", text);
  DetectOptions o;
  o.input.samples = dir / "unlabelled.jsonl";
  o.oracle = "planted";
  std::string err;
  EXPECT_EQ(guarded([&] { return cmd_detect(config(dir / "run"), o); }, &err), 3);
  EXPECT_NE(err.find("planted label"), std::string::npos) << err;
  o.oracle = "vibes";
  EXPECT_EQ(guarded([&] { return cmd_detect(config(dir / "run"), o); }), 1);
  // all short: no AUC, but the run still succeeds
  o.input.samples = samples;
  o.oracle = "planted";
  ASSERT_EQ(cmd_detect(config(dir / "run"), o), 0);
  const auto summary = read_report(dir / "run" / "summary.json");
  EXPECT_TRUE(summary["auc"].is_null());
  EXPECT_TRUE(summary.contains("note"));
}

TEST(Generate, RecordsPerSampleAndScores) {
  TempDir dir;
  GenerateOptions o;
  o.prompts = write_prompts(dir.path());
  o.n_samples = 5;
  o.max_new = 4;
  ASSERT_EQ(cmd_generate(config(dir / "run"), o), 0);
  const auto rows = read_jsonl(dir / "run" / "generations.jsonl");
  ASSERT_EQ(rows.size(), 10u);
  EXPECT_EQ(rows[4]["prompt_id"], "p0");
  EXPECT_EQ(rows[5]["prompt_id"], "p1");
  EXPECT_EQ(rows[0]["steps"].size(), 4u);
  EXPECT_TRUE(rows[0].contains("scores"));
  EXPECT_FALSE(rows[5].contains("scores"));
  const auto summary = read_report(dir / "run" / "summary.json");
  EXPECT_EQ(summary["scores"]["n_examples"], 1);
  EXPECT_EQ(summary["scores"]["n_generations"], 5);
  for (const char* k : {"f1", "bleu", "rouge_l"}) {
    EXPECT_GE(summary["scores"]["best_per_example"][k].get<double>(), summary["scores"]["average"][k].get<double>());
  }
}

TEST(Generate, GoldFileAndBestPerExample) {
  TempDir dir;
  GenerateOptions o;
  o.prompts = write_prompts(dir.path());
  spit(dir / "gold.jsonl", "{\"id\":\"p1\",\"gold\":\"17 17\"}\n");
  o.gold = dir / "gold.jsonl";
  o.n_samples = 3;
  o.max_new = 2;
  ASSERT_EQ(cmd_generate(config(dir / "run"), o), 0);
  const auto rows = read_jsonl(dir / "run" / "generations.jsonl");
  const auto summary = read_report(dir / "run" / "summary.json");
  EXPECT_EQ(summary["scores"]["n_examples"], 2);
  // recompute both aggregates from the per-record scores
  double avg = 0.0, best_sum = 0.0;
  for (std::size_t p = 0; p < 2; ++p) {
    double best = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double f = rows[p * 3 + k]["scores"]["f1"].get<double>();
      avg += f;
      best = std::max(best, f);
    }
    best_sum += best;
  }
  EXPECT_DOUBLE_EQ(summary["scores"]["average"]["f1"].get<double>(), avg / 6.0);
  EXPECT_DOUBLE_EQ(summary["scores"]["best_per_example"]["f1"].get<double>(), best_sum / 2.0);
}

TEST(Generate, ByteIdenticalForEveryMethod) {
  TempDir dir;
  GenerateOptions o;
  o.prompts = write_prompts(dir.path());
  o.n_samples = 3;
  o.max_new = 6;
  for (const std::string method : {"vanilla", "cad", "taboo"}) {
    o.method = method;
    auto a = config(dir / ("a_" + method));
    auto b = config(dir / ("b_" + method));
    a.lambda = b.lambda = 4.0;
    b.parallel = 1;
    ASSERT_EQ(cmd_generate(a, o), 0) << method;
    ASSERT_EQ(cmd_generate(b, o), 0) << method;
    expect_same_tree(dir / ("a_" + method), dir / ("b_" + method));
  }
}

TEST(Generate, TabooWithInfiniteGammaMatchesVanillaTexts) {
  TempDir dir;
  GenerateOptions o;
  o.prompts = write_prompts(dir.path());
  o.n_samples = 5;
  o.max_new = 8;
  ASSERT_EQ(cmd_generate(config(dir / "vanilla"), o), 0);
  auto c = config(dir / "taboo");
  c.gamma = INFINITY;
  c.lambda = 10.0;
  o.method = "taboo";
  ASSERT_EQ(cmd_generate(c, o), 0);
  const auto v = read_jsonl(dir / "vanilla" / "generations.jsonl");
  const auto t = read_jsonl(dir / "taboo" / "generations.jsonl");
  ASSERT_EQ(v.size(), t.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(v[i]["text"], t[i]["text"]);
    for (const auto& step : t[i]["steps"]) EXPECT_TRUE(step["boosted_set"].empty());
  }
}

TEST(Generate, TabooBoostsTheLongContextAnswer) {
  TempDir dir;
  GenerateOptions o;
  o.prompts = write_prompts(dir.path());
  o.n_samples = 1;
  o.max_new = 1;
  o.method = "taboo";
  auto c = config(dir / "run");
  c.lambda = 2.0;
  ASSERT_EQ(cmd_generate(c, o), 0);
  const auto step = read_jsonl(dir / "run" / "generations.jsonl")[0]["steps"][0];
  EXPECT_EQ(step["boosted_set"], nlohmann::json::array({17}));
  EXPECT_EQ(step["chosen"], 17);
}

TEST(Generate, UsageErrors) {
  TempDir dir;
  GenerateOptions o;
  o.prompts = write_prompts(dir.path());
  o.method = "taboo";
  std::string err;
  EXPECT_EQ(guarded([&] { return cmd_generate(config(dir / "run"), o); }, &err), 1);
  EXPECT_NE(err.find("--lambda"), std::string::npos);
  o.method = "beam";
  EXPECT_EQ(guarded([&] { return cmd_generate(config(dir / "run"), o); }), 1);
  o.method = "vanilla";
  o.n_samples = 0;
  EXPECT_EQ(guarded([&] { return cmd_generate(config(dir / "run"), o); }), 1);
  o.n_samples = 1;
  spit(dir / "empty.jsonl", "");
  o.prompts = dir / "empty.jsonl";
  EXPECT_EQ(guarded([&] { return cmd_generate(config(dir / "run"), o); }), 3);
}

TEST(Bench, OverheadTracksShortCallFraction) {
  TempDir dir;
  // forward cost grows 100 us per visible token; the short call sees 32 of 256
  auto c = config(dir / "run", "mock:needle:latency_us_per_token=100");
  BenchOptions o;
  o.lengths = {256};
  o.repeats = 3;
  ASSERT_EQ(cmd_bench(c, o), 0);
  const auto csv = slurp(dir / "run" / "bench.csv");
  EXPECT_TRUE(csv.starts_with("len,full_ms,extra_ms,ratio\n256,")) << csv;
  const auto rows = read_report(dir / "run" / "bench.json")["rows"];
  ASSERT_EQ(rows.size(), 1u);
  const double ratio = rows[0]["ratio"].get<double>();
  EXPECT_NEAR(ratio, 32.0 / 256.0, 0.1 * 32.0 / 256.0);
  EXPECT_GE(rows[0]["full_ms"].get<double>(), 25.6);
}

TEST(Bench, ScheduleErrors) {
  TempDir dir;
  BenchOptions o;
  o.lengths = {};
  EXPECT_EQ(guarded([&] { return cmd_bench(config(dir / "run"), o); }), 1);
  o.lengths = {32};
  EXPECT_EQ(guarded([&] { return cmd_bench(config(dir / "run"), o); }), 1);
  o.lengths = {64};
  o.repeats = 0;
  EXPECT_EQ(guarded([&] { return cmd_bench(config(dir / "run"), o); }), 1);
}

TEST(Score, RowsAndAggregate) {
  TempDir dir;
  spit(dir / "rows.jsonl", "{\"id\":\"x\",\"pred\":\"red blue\",\"gold\":\"blue\"}\n"
                           "{\"pred\":\"a c\",\"gold\":\"a b c\"}\n");
  ScoreOptions o;
  o.input = dir / "rows.jsonl";
  ASSERT_EQ(cmd_score(config(dir / "run"), o), 0);
  const auto rows = read_jsonl(dir / "run" / "scores.jsonl");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["id"], "x");
  EXPECT_DOUBLE_EQ(rows[0]["f1"].get<double>(), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(rows[1]["rouge_l"].get<double>(), 0.8);
  const auto summary = read_report(dir / "run" / "summary.json");
  EXPECT_DOUBLE_EQ(summary["rouge_l"].get<double>(), (2.0 / 3.0 + 0.8) / 2.0);
  spit(dir / "bad.jsonl", "{\"pred\":\"x\"}\n");
  o.input = dir / "bad.jsonl";
  EXPECT_EQ(guarded([&] { return cmd_score(config(dir / "run"), o); }), 3);
}

TEST(Binary, EndToEndThroughTheExecutable) {
  TempDir dir;
  const std::string exe = CTXLENS_EXE;
  const auto run = [&](const std::string& args) {
    const int status = std::system((exe + " " + args + " >" + (dir / "stdout.txt").string() + " 2>" +
                                    (dir / "stderr.txt").string())
                                       .c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  const auto out = (dir / "o").string();
  ASSERT_EQ(run("--backend mock:needle --seed 3 --out " + out + " synth --mix 10:8,100:2"), 0)
      << slurp(dir / "stderr.txt");
  spit(dir / "run.conf", "backend = mock:needle\nseed = 3\nout = " + (dir / "m").string() + "\n");
  ASSERT_EQ(run("--config " + (dir / "run.conf").string() + " mcl --samples " + out + "/samples.jsonl"), 0)
      << slurp(dir / "stderr.txt");
  EXPECT_EQ(read_report(dir / "m" / "summary.json")["share_le_32"].get<double>(), 0.8);
  EXPECT_EQ(run("--backend mock:needle --out " + out + " detect --oracle planted --samples " + out +
                "/samples.jsonl --tau-sweep 0.1,0.6"),
            0)
      << slurp(dir / "stderr.txt");
  EXPECT_TRUE(fs::exists(dir / "o" / "tau_sweep.csv"));
  EXPECT_EQ(run("--bogus-flag mcl"), 1);
  EXPECT_EQ(run("--backend mock:needle --out " + out + " damcl --metric cosine --samples " + out + "/samples.jsonl"),
            1);
  EXPECT_EQ(run("--backend mock:needle --out " + out + " generate --method taboo --prompts " + out +
                "/samples.jsonl"),
            1);
  EXPECT_NE(slurp(dir / "stderr.txt").find("--lambda"), std::string::npos);
  EXPECT_EQ(run("--backend mock:nothing --out " + out + " mcl --samples " + out + "/samples.jsonl"), 1);
  EXPECT_EQ(run("--backend http://127.0.0.1:1#timeout_ms=200,retries=0 --out " + out + " mcl --samples " + out +
                "/samples.jsonl"),
            2)
      << slurp(dir / "stderr.txt");
  EXPECT_EQ(run("--help"), 0);
}
