#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <regex>

#include "opmask/cli/config.hpp"
#include "opmask/cli/pipeline.hpp"
#include "opmask/cli/plot.hpp"
#include "opmask/cli/record.hpp"

using namespace opmask;
using namespace opmask::cli;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("opmask_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

struct Result {
  int status;
  std::string out;
};

// Runs the CLI binary with the given arguments; stdout and stderr combined.
Result run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(OPMASK_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  std::string out;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), p)) out += buf.data();
  const int st = pclose(p);
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, out};
}

// A model and dataset small enough to train in well under a second.
const char* kTiny = R"(dataset:
  train_size: 12
  test_size: 6
  gen:
    num_classes: 3
    min_instances: 2
    max_instances: 3
    overlap_pressure: 0.8
model:
  num_classes: 3
  backbone_channels: [4, 4, 6, 6]
  pyramid_channels: 4
  box_head_channels: 6
  mask_head_channels: 4
train:
  iterations: 4
  warmup: 2
  batch_size: 2
  strong_ids: [0, 1]
)";

fs::path tiny_config(const fs::path& dir) {
  write(dir / "tiny.yaml", kTiny);
  return dir / "tiny.yaml";
}

ExperimentConfig tiny(const fs::path& dir) {
  LoadOptions o;
  o.file = tiny_config(dir);
  o.use_env = false;
  return load_config(o);
}

}  // namespace

// ---- config -----------------------------------------------------------------

TEST(Config, DefaultsRoundTripThroughYaml) {
  const auto d = scratch("defaults");
  const auto tree = to_json_tree(ExperimentConfig{});
  write(d / "c.yaml", to_yaml(tree));
  LoadOptions o;
  o.file = d / "c.yaml";
  o.use_env = false;
  EXPECT_EQ(to_json_tree(load_config(o)), tree);
}

TEST(Config, IncludesMergeWithLaterKeysWinning) {
  const auto d = scratch("include");
  fs::create_directories(d / "sub");
  write(d / "sub" / "a.yaml", "train:\n  base_lr: 0.5\n  iterations: 7\nseed: 3\n");
  write(d / "b.yaml", "train:\n  iterations: 9\n");
  write(d / "main.yaml", "include: [sub/a.yaml, b.yaml]\ntrain:\n  warmup: 4\n");
  LoadOptions o;
  o.file = d / "main.yaml";
  o.use_env = false;
  const auto c = load_config(o);
  EXPECT_EQ(c.train.base_lr, 0.5);
  EXPECT_EQ(c.train.iterations, 9);
  EXPECT_EQ(c.train.warmup, 4);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.train.momentum, 0.9);  // untouched default
}

TEST(Config, IncludeCycleIsRejected) {
  const auto d = scratch("cycle");
  write(d / "a.yaml", "include: b.yaml\n");
  write(d / "b.yaml", "include: a.yaml\n");
  LoadOptions o;
  o.file = d / "a.yaml";
  EXPECT_THROW(load_config(o), ConfigError);
}

TEST(Config, ErrorsNameTheKey) {
  const auto d = scratch("errors");
  auto expect_msg = [&](const std::string& yaml, const std::string& needle) {
    write(d / "c.yaml", yaml);
    LoadOptions o;
    o.file = d / "c.yaml";
    o.use_env = false;
    try {
      load_config(o);
      ADD_FAILURE() << "no error for " << yaml;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_msg("train:\n  bas_lr: 1\n", "train.bas_lr");
  expect_msg("train:\n  iterations: 2.5\n", "train.iterations");
  expect_msg("model:\n  pyramid_channels: wide\n", "model.pyramid_channels");
  expect_msg("dataset:\n  gen: 3\n", "dataset.gen");
  expect_msg("deterministic: false\n", "deterministic");
  expect_msg("train:\n  variant: fancy\n", "fancy");
}

TEST(Config, EnvironmentThenSetOverridesApply) {
  const auto d = scratch("env");
  write(d / "c.yaml", "train:\n  base_lr: 0.1\n  iterations: 5\n  warmup: 1\n");
  struct EnvGuard {
    EnvGuard() {
      ::setenv("OPMASK_TRAIN__BASE_LR", "0.25", 1);
      ::setenv("OPMASK_TRAIN__ITERATIONS", "11", 1);
    }
    ~EnvGuard() {
      ::unsetenv("OPMASK_TRAIN__BASE_LR");
      ::unsetenv("OPMASK_TRAIN__ITERATIONS");
    }
  };
  ExperimentConfig c;
  {
    EnvGuard g;
    LoadOptions o;
    o.file = d / "c.yaml";
    o.sets = {"train.iterations=13", "dataset.gen.overlap_pressure=0.5"};
    c = load_config(o);
  }
  EXPECT_EQ(c.train.base_lr, 0.25);
  EXPECT_EQ(c.train.iterations, 13);
  EXPECT_EQ(c.dataset.gen.overlap_pressure, 0.5);
}

TEST(Config, SeedPropagatesToEveryStochasticStage) {
  ExperimentConfig a, b;
  b.seed = 2;
  EXPECT_NE(a.effective_train().seed, b.effective_train().seed);
  EXPECT_NE(a.train_data_seed(), b.train_data_seed());
  EXPECT_NE(a.test_data_seed(), b.test_data_seed());
  EXPECT_NE(a.train_data_seed(), a.test_data_seed());
  b.dataset.seed = 1;  // pinned data, new training seed
  EXPECT_EQ(a.train_data_seed(), b.train_data_seed());
}

// ---- hashing and records ------------------------------------------------------

TEST(Record, HashesMatchKnownValues) {
  EXPECT_EQ(sha1_hex("abc"), "a9993e364706816aba3e25717850c26c9cd0d89d");
  // `printf 'hello\n' | git hash-object --stdin`
  EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Record, ConfigHashChangesIffConfigChanges) {
  ExperimentConfig a, b;
  b.output = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.train.base_lr = 0.02;
  EXPECT_NE(config_hash(a), config_hash(b));
  ExperimentConfig c;
  c.dataset.gen.overlap_pressure = 0.1;
  EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(Record, DatasetHashChangesIffContentChanges) {
  const auto d = scratch("dshash");
  synth::GenConfig g;
  synth::generate_dataset(g, 3, 5, d / "a");
  synth::generate_dataset(g, 3, 5, d / "b");
  synth::generate_dataset(g, 3, 6, d / "c");
  EXPECT_EQ(dataset_hash(d / "a"), dataset_hash(d / "b"));
  EXPECT_NE(dataset_hash(d / "a"), dataset_hash(d / "c"));
  EXPECT_EQ(dataset_hash(d / "a"), git_blob_hash(read_file(d / "a" / "annotations.json")));
}

TEST(Record, FailureQuarantinesPartialOutputs) {
  const auto d = scratch("quarantine");
  RunScope s(d, "train");
  write(s.add("metrics.jsonl"), "{}\n");
  fs::create_directories(s.add("data/train"));
  s.add("ckpt_10.bin");  // never written
  s.fail("boom");
  EXPECT_FALSE(fs::exists(d / "metrics.jsonl"));
  EXPECT_TRUE(fs::exists(d / "failed" / "metrics.jsonl"));
  EXPECT_TRUE(fs::is_directory(d / "failed" / "data" / "train"));
  const auto rec = record_from_json(nlohmann::json::parse(read_file(d / "failed" / "run_record.json")));
  EXPECT_EQ(rec.status, "failed");
  EXPECT_EQ(rec.error, "boom");
  EXPECT_FALSE(fs::exists(d / "run_record.json"));
}

TEST(Record, SuccessWritesRecordWithoutTemporaries) {
  const auto d = scratch("success");
  RunScope s(d, "eval", "run_record_eval.json");
  s.record().config_hash = "x";
  s.succeed();
  const auto rec = record_from_json(nlohmann::json::parse(read_file(d / "run_record_eval.json")));
  EXPECT_EQ(rec.status, "ok");
  EXPECT_GE(rec.wall_clock_seconds, 0.0);
  for (const auto& e : fs::directory_iterator(d)) EXPECT_EQ(e.path().extension(), ".json");
}

// ---- plots -----------------------------------------------------------------------

namespace {

nlohmann::json regression_doc(int n) {
  std::vector<double> x, y;
  nlohmann::json pts = nlohmann::json::array();
  for (int i = 0; i < n; ++i) {
    x.push_back(0.1 * i);
    y.push_back(0.5 - 0.3 * x.back() + 0.01 * ((i * 7) % 3));
    pts.push_back({{"class_id", i}, {"overlap", x.back()}, {"ap", y.back()}});
  }
  return {{"kind", "overlap_regression"},
          {"variant", "baseline"},
          {"points", pts},
          {"regression", eval::regression_to_json(eval::ols_regression(x, y))}};
}

}  // namespace

TEST(Plot, RegressionLineCarriesTheFittedSlope) {
  const auto d = scratch("plot_reg");
  const auto doc = regression_doc(8);
  const auto names = emit_plots({{"reg.json", doc}}, d);
  ASSERT_EQ(names, std::vector<std::string>{"overlap_baseline.svg"});
  const auto svg = read_file(d / names[0]);
  std::smatch m;
  ASSERT_TRUE(std::regex_search(svg, m, std::regex("data-slope=\"([^\"]+)\"")));
  EXPECT_EQ(std::stod(m[1]), doc["regression"]["slope"].get<double>());
  EXPECT_EQ(std::count(svg.begin(), svg.end(), '\n') > 8, true);
  std::ptrdiff_t circles = 0;
  for (std::size_t p = 0; (p = svg.find("<circle", p)) != std::string::npos; ++p) ++circles;
  EXPECT_EQ(circles, 8);
}

TEST(Plot, SameInputGivesIdenticalBytes) {
  const auto a = scratch("plot_a"), b = scratch("plot_b");
  const nlohmann::json sweep{
      {"kind", "sweep"},
      {"variants",
       {{"opmask", {{{"count", 2}, {"weak_ap_mean", 0.1}, {"all_ap_mean", 0.2}}, {{"count", 8}, {"weak_ap_mean", nullptr}, {"all_ap_mean", 0.4}}}},
        {"baseline", {{{"count", 2}, {"weak_ap_mean", 0.05}, {"all_ap_mean", 0.15}}}}}}};
  const nlohmann::json amb{{"kind", "ambiguity"}, {"variant", "opmask"}, {"ambiguous", {{"ap", 0.1}}}, {"non_ambiguous", {{"ap", 0.3}}}};
  const std::vector<PlotInput> in{{"r", regression_doc(5)}, {"s", sweep}, {"a", amb}};
  const auto na = emit_plots(in, a), nb = emit_plots(in, b);
  ASSERT_EQ(na, (std::vector<std::string>{"overlap_baseline.svg", "ap_vs_split.svg", "ambiguity.svg"}));
  ASSERT_EQ(na, nb);
  for (const auto& n : na) EXPECT_EQ(read_file(a / n), read_file(b / n)) << n;
}

TEST(Plot, EmptyListWritesNothing) {
  const auto d = scratch("plot_empty");
  EXPECT_TRUE(emit_plots({}, d / "figs").empty());
  EXPECT_FALSE(fs::exists(d / "figs"));
}

TEST(Plot, SchemaErrorsNameTheField) {
  const auto d = scratch("plot_schema");
  auto doc = regression_doc(4);
  doc["points"][2]["overlap"] = "high";
  try {
    emit_plots({{"r.json", doc}}, d);
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("r.json.points[2].overlap"), std::string::npos) << e.what();
  }
  EXPECT_THROW(emit_plots({{"x", nlohmann::json{{"kind", "pie"}}}}, d), SchemaError);
  EXPECT_THROW(emit_plots({{"x", nlohmann::json{{"variant", "opmask"}}}}, d), SchemaError);
}

// ---- pipeline ----------------------------------------------------------------------

TEST(Pipeline, SubsetResolution) {
  EXPECT_EQ(resolve_subset("weak", {0, 1, 2, 3}, 8), (std::set<int>{4, 5, 6, 7}));
  EXPECT_EQ(resolve_subset("strong", {0, 1}, 4), (std::set<int>{0, 1}));
  EXPECT_EQ(resolve_subset("all", {0}, 3), (std::set<int>{0, 1, 2}));
  EXPECT_EQ(resolve_subset("1,3", {0}, 4), (std::set<int>{1, 3}));
  EXPECT_THROW(resolve_subset("9", {0}, 4), ConfigError);
}

TEST(Pipeline, TrainEvalRerunIsByteIdentical) {
  const auto d = scratch("rerun");
  const auto cfg = tiny(d);
  for (const char* name : {"r1", "r2"}) {
    RunScope s(d / name, "train");
    train_run(cfg, d / name, s);
    s.succeed();
    RunScope e(d / name, "eval", "run_record_eval.json");
    eval_run(d / name, "weak", "", e);
    analyze_ambiguity(d / name, "weak", "", e);
    analyze_overlap(d / name, "all", eval::OverlapAggregation::mean_iou, "", e);
    e.succeed();
  }
  for (const char* f : {"metrics.jsonl", "eval_weak.json", "eval_ambiguity.json", "eval_overlap.json", "ckpt_4.bin"})
    EXPECT_EQ(read_file(d / "r1" / f), read_file(d / "r2" / f)) << f;
  const auto r1 = nlohmann::json::parse(read_file(d / "r1" / "run_record.json"));
  const auto r2 = nlohmann::json::parse(read_file(d / "r2" / "run_record.json"));
  EXPECT_EQ(r1["config_hash"], r2["config_hash"]);
  EXPECT_EQ(r1["dataset_hash"], r2["dataset_hash"]);
}

TEST(Pipeline, EvalRestrictsToTheSubset) {
  const auto d = scratch("subset");
  const auto cfg = tiny(d);
  RunScope s(d / "r", "train");
  train_run(cfg, d / "r", s);
  RunScope e(d / "r", "eval");
  const auto j = eval_run(d / "r", "weak", "", e);
  EXPECT_EQ(j["classes"], nlohmann::json::array({2}));
  for (const auto& [k, v] : j["mask"]["per_class_ap"].items()) EXPECT_EQ(k, "2");
  // Cached detections are reused: a second eval gives the same document.
  EXPECT_EQ(eval_run(d / "r", "weak", "", e), j);
}

TEST(Pipeline, SweepAndComparePriorsProduceAggregates) {
  const auto d = scratch("sweep");
  const auto cfg = tiny(d);
  SweepOptions opt;
  opt.counts = {1, 3};
  opt.seeds = 2;
  opt.jobs = 2;
  const auto j = sweep_splits(cfg, d / "sweep", opt);
  ASSERT_EQ(j["variants"]["opmask"].size(), 2u);
  EXPECT_EQ(j["variants"]["opmask"][0]["runs"].size(), 2u);
  EXPECT_TRUE(j["variants"]["baseline"][1]["weak_ap_mean"].is_null());  // all classes strong
  EXPECT_TRUE(j["variants"]["baseline"][1]["all_ap_mean"].is_number());
  EXPECT_TRUE(fs::exists(d / "sweep" / "opmask" / "k3_s2" / "eval_all.json"));

  const auto p = compare_priors(cfg, d / "priors");
  for (const char* v : {"cls_only", "baseline", "opmask"}) EXPECT_TRUE(p["variants"][v]["prior_all"]["ap50"].is_number()) << v;
  EXPECT_TRUE(p["variants"]["cls_only"]["mask_weak"].is_null());
}

// ---- the binary ------------------------------------------------------------------------

TEST(Binary, UsageErrorsExitOne) {
  EXPECT_EQ(run_cli("").status, 1);
  EXPECT_EQ(run_cli("frobnicate").status, 1);
  EXPECT_EQ(run_cli("train --config /nonexistent/c.yaml").status, 1);
  EXPECT_EQ(run_cli("train --bogus-flag").status, 1);
  EXPECT_EQ(run_cli("eval").status, 1);  // --run is required
  const auto r = run_cli("train --set train.bas_lr=1 --out /tmp/opmask_cli_never");
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("train.bas_lr"), std::string::npos);
  EXPECT_NE(r.out.find("Usage"), std::string::npos);
  EXPECT_EQ(run_cli("--help").status, 0);
}

TEST(Binary, DumpDefaultsIsALoadableConfig) {
  const auto d = scratch("bin_dump");
  const auto r = run_cli("--dump-defaults");
  ASSERT_EQ(r.status, 0);
  write(d / "c.yaml", r.out);
  LoadOptions o;
  o.file = d / "c.yaml";
  o.use_env = false;
  EXPECT_EQ(to_json_tree(load_config(o)), to_json_tree(ExperimentConfig{}));
}

TEST(Binary, GenTrainEvalPlot) {
  const auto d = scratch("bin_flow");
  const auto cfg = tiny_config(d).string();
  ASSERT_EQ(run_cli("gen-data --config " + cfg + " --out " + (d / "data").string()).status, 0);
  EXPECT_TRUE(fs::exists(d / "data" / "annotations.json"));
  const auto rec = nlohmann::json::parse(read_file(d / "data" / "run_record.json"));
  EXPECT_EQ(rec["dataset_hash"], dataset_hash(d / "data"));

  const std::string run = (d / "run").string();
  auto r = run_cli("train --config " + cfg + " --variant baseline --split strong=0,1 --out " + run + " --data " +
                   (d / "data").string());
  ASSERT_EQ(r.status, 0) << r.out;
  for (const char* f : {"config.snapshot", "metrics.jsonl", "ckpt_4.bin", "run_record.json"})
    EXPECT_TRUE(fs::exists(d / "run" / f)) << f;
  EXPECT_EQ(run_cli("train --config " + cfg + " --out " + run).status, 1);  // exists, no --force

  r = run_cli("eval --run " + run + " --subset weak");
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(nlohmann::json::parse(read_file(d / "run" / "eval_weak.json"))["variant"], "baseline");
  ASSERT_EQ(run_cli("analyze-overlap --run " + run + " --subset all").status, 0);
  ASSERT_EQ(run_cli("analyze-ambiguity --run " + run).status, 0);
  r = run_cli("plot " + (d / "run" / "eval_overlap.json").string() + " " + (d / "run" / "eval_ambiguity.json").string());
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(fs::exists(d / "run" / "figures" / "overlap_baseline.svg"));
  EXPECT_TRUE(fs::exists(d / "run" / "figures" / "ambiguity.svg"));
}

TEST(Binary, PlotEdgeCases) {
  const auto d = scratch("bin_plot");
  write(d / "empty.json", "[]");
  auto r = run_cli("plot " + (d / "empty.json").string() + " --out " + (d / "figs").string());
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("warning"), std::string::npos);
  EXPECT_FALSE(fs::exists(d / "figs"));
  write(d / "bad.json", R"({"kind": "overlap_regression", "variant": "opmask", "points": [{"class_id": 1, "ap": 0.2}], "regression": null})");
  r = run_cli("plot " + (d / "bad.json").string() + " --out " + (d / "figs").string());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("points[0].overlap"), std::string::npos) << r.out;
}

TEST(Binary, RuntimeFailureExitsTwoAndQuarantines) {
  const auto d = scratch("bin_fail");
  const auto cfg = tiny_config(d).string();
  // A dataset whose annotation file is corrupt fails after the run started.
  fs::create_directories(d / "broken");
  write(d / "broken" / "annotations.json", "{ not json");
  const auto r = run_cli("train --config " + cfg + " --out " + (d / "run").string() + " --data " + (d / "broken").string());
  EXPECT_EQ(r.status, 2) << r.out;
  EXPECT_TRUE(fs::exists(d / "run" / "failed" / "config.snapshot"));
  EXPECT_FALSE(fs::exists(d / "run" / "config.snapshot"));
  const auto rec = nlohmann::json::parse(read_file(d / "run" / "failed" / "run_record.json"));
  EXPECT_EQ(rec["status"], "failed");
  EXPECT_EQ(run_cli("eval --run " + d.string()).status, 2);  // not a run directory
}

TEST(Binary, EnvironmentOverridesReachTheRun) {
  const auto d = scratch("bin_env");
  const auto cfg = tiny_config(d).string();
  const auto r = run_cli("train --config " + cfg + " --out " + (d / "run").string(), "OPMASK_TRAIN__ITERATIONS=3");
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(fs::exists(d / "run" / "ckpt_3.bin"));
  EXPECT_EQ(read_snapshot(d / "run").train.iterations, 3);
}
