#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "attriqe/errors.hpp"
#include "attriqe/pipeline.hpp"

namespace attriqe::pipeline {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json tiny_config(const fs::path& out) {
  return {
      {"seed", 21},
      {"paths", {{"out", out.string()}}},
      {"data", {{"synthetic_pairs", 320}, {"train_size", 200}, {"dev_size", 60}, {"test_size", 60}}},
      {"model", {{"layers", 2}, {"d_model", 16}, {"heads", 2}, {"ff", 32}}},
      {"training", {{"max_epochs", 2}, {"batch_size", 16}}},
      {"attribution",
       {{"limit", 12},
        {"methods", {"ig", "attention", "random", "lime", "ib"}},
        {"ig", {{"steps", 8}}},
        {"ib", {{"steps", 3}, {"prior_sentences", 20}}},
        {"lime", {{"samples", 40}}}}},
      {"sweep", {{"dev_limit", 20}, {"test_limit", 20}}},
      {"analysis", {{"limit", 30}}},
  };
}

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("attriqe_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

TEST(Config, UnknownKeysAndBadValuesFailEarly) {
  EXPECT_THROW(RunConfig::from_json({{"sed", 1}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"model", {{"layer", 4}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"model", 4}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json::array()), ConfigError);

  auto bad_method = RunConfig::from_json({{"attribution", {{"methods", {"shap"}}}}});
  EXPECT_THROW(bad_method.validate(), ConfigError);
  auto unlayered_sweep = RunConfig::from_json({{"sweep", {{"methods", {"random"}}}}});
  EXPECT_THROW(unlayered_sweep.validate(), ConfigError);
  auto heads = RunConfig::from_json({{"model", {{"heads", 5}}}});
  EXPECT_THROW(heads.validate(), ConfigError);
  auto files = RunConfig::from_json({{"data", {{"source", "files"}}}});
  EXPECT_THROW(files.validate(), ConfigError);
  auto workers = RunConfig::from_json({{"workers", 0}});
  EXPECT_THROW(workers.validate(), ConfigError);

  // Nothing is written when the config is rejected.
  const fs::path out = fresh("rejected");
  auto c = RunConfig::from_json({{"paths", {{"out", out.string()}}}, {"data", {{"rate", 2.0}}}});
  EXPECT_THROW(gen_data(c), ConfigError);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Config, DefaultsRoundTripThroughTheSnapshot) {
  const auto c = RunConfig::from_json(json::object());
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.model_config().layers, 4u);
  EXPECT_EQ(c.model_config().d_model, 64u);
  EXPECT_TRUE(c.tree()["paths"]["data_dir"].is_null());
  const auto again = RunConfig::from_json(json::parse(c.snapshot()));
  EXPECT_EQ(again.data_dir(), fs::absolute(c.data_dir()).lexically_normal());
  EXPECT_EQ(dump_name(attr::Method::ig, 3), "ig-L3.jsonl");
  EXPECT_EQ(dump_name(attr::Method::random, std::nullopt), "random.jsonl");
}

class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fresh("run");
    config_ = new RunConfig(RunConfig::from_json(tiny_config(root_)));
    gen_data(*config_);
    train(*config_);
  }
  static void TearDownTestSuite() {
    delete config_;
    config_ = nullptr;
  }
  static inline fs::path root_;
  static inline RunConfig* config_ = nullptr;
};

TEST_F(TinyRun, StagesWriteTheirOutputs) {
  for (const char* f : {"data/train.jsonl", "data/dev.jsonl", "data/test.jsonl", "data/stats.json", "data/config.json",
                        "model/model.ckpt", "model/vocab.json", "model/metrics.json", "model/model.json", "model/log.jsonl"}) {
    EXPECT_TRUE(fs::exists(root_ / f)) << f;
  }
  const json stats = json::parse(read_file(root_ / "data" / "stats.json"));
  EXPECT_EQ(stats["dev"]["sentences"], 60);
  EXPECT_EQ(stats["dev"]["sentences_with_error"], 30);

  attribute(*config_);
  const json manifest = json::parse(read_file(root_ / "attributions" / "manifest.json"));
  // ig 0..2, ib 0..2, attention 1..2, random, lime
  EXPECT_EQ(manifest["files"].size(), 10u);
  const auto ig = attr::read_dump(root_ / "attributions" / "ig-L2.jsonl");
  EXPECT_EQ(ig.size(), 12u);
  EXPECT_TRUE(fs::exists(root_ / "attributions" / "ib_prior.json"));

  evaluate(*config_);
  const json rep = json::parse(read_file(root_ / "eval" / "report.json"));
  EXPECT_EQ(rep["rows"].size(), 10u);

  sweep(*config_);
  const json sel = json::parse(read_file(root_ / "sweep" / "selected.json"));
  ASSERT_TRUE(sel.contains("ig"));
  EXPECT_LE(sel["ig"]["layer"].get<std::size_t>(), 2u);
  EXPECT_TRUE(fs::exists(root_ / "sweep" / "ig" / "dev_curve.csv"));

  analyze(*config_);
  EXPECT_TRUE(fs::exists(root_ / "analysis" / "categories.csv"));

  report(*config_);
  const json summary = json::parse(read_file(root_ / "report" / "summary.json"));
  for (const char* k : {"data", "model", "evaluation", "sweep"}) EXPECT_TRUE(summary.contains(k)) << k;
}

TEST_F(TinyRun, OutputsAreWriteOnce) {
  EXPECT_THROW(gen_data(*config_), StateError);
  const std::string before = read_file(root_ / "data" / "train.jsonl");
  gen_data(*config_, {.force = true});
  EXPECT_EQ(read_file(root_ / "data" / "train.jsonl"), before);
}

TEST_F(TinyRun, EvaluatesAnExternalDumpWithoutAModel) {
  const fs::path out = fresh("external");
  json j = tiny_config(out);
  j["paths"]["data_dir"] = (root_ / "data").string();
  j["paths"]["model_dir"] = (out / "no_model").string();
  const auto c = RunConfig::from_json(j);
  const Dataset data = load_data(c.data_dir());
  // An outside system that happens to know the gold labels.
  std::vector<attr::Attribution> dump;
  for (const auto& e : data.test) {
    attr::Attribution a;
    a.id = e.id;
    a.method = attr::Method::external;
    a.source_scores.assign(e.source.size(), 0.0);
    for (auto l : e.labels) a.target_scores.push_back(l == corpus::Label::bad ? 1.0 : 0.0);
    dump.push_back(std::move(a));
  }
  fs::create_directories(out / "mine");
  attr::write_dump(out / "mine" / "external.jsonl", dump);
  evaluate(c, {out / "mine" / "external.jsonl"});
  const json rep = json::parse(read_file(out / "eval" / "report.json"));
  ASSERT_EQ(rep["rows"].size(), 1u);
  EXPECT_DOUBLE_EQ(rep["rows"][0]["auc"].get<double>(), 1.0);

  // The same run asked to attribute needs the model.
  EXPECT_THROW(attribute(c), PathError);
}

TEST_F(TinyRun, RejectsDumpsThatDoNotMatchTheSplit) {
  const fs::path out = fresh("mismatch");
  json j = tiny_config(out);
  j["paths"]["data_dir"] = (root_ / "data").string();
  const auto c = RunConfig::from_json(j);
  const Dataset data = load_data(c.data_dir());
  fs::create_directories(out);
  attr::write_dump(out / "dev.jsonl", run_random(data.dev, 3));
  EXPECT_THROW(evaluate(c, {out / "dev.jsonl"}), AlignmentError);
  EXPECT_THROW(evaluate(c, {out / "missing.jsonl"}), PathError);
}

// ---- command line -----------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(ATTRIQE_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, PrintsDefaults) {
  const fs::path log = fresh("cli_defaults.txt");
  ASSERT_EQ(run_cli("--print-defaults", log), 0);
  const json d = json::parse(read_file(log));
  EXPECT_EQ(d["model"]["layers"], 4);
}

TEST(Cli, ErrorsMapToExitCodes) {
  const fs::path dir = fresh("cli");
  fs::create_directories(dir);
  write_file(dir / "bad.json", R"({"modle": {}})");
  EXPECT_EQ(run_cli("gen-data --config " + (dir / "bad.json").string() + " --out " + (dir / "run").string(),
                    dir / "log1.txt"),
            exit_code(ErrorCategory::config));
  EXPECT_NE(read_file(dir / "log1.txt").find("\"error\":\"config\""), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "run"));

  EXPECT_EQ(run_cli("train --out " + (dir / "empty").string(), dir / "log2.txt"), exit_code(ErrorCategory::path));
  EXPECT_EQ(run_cli("evaluate --out " + (dir / "empty").string(), dir / "log3.txt"), exit_code(ErrorCategory::path));
  EXPECT_EQ(run_cli("frobnicate", dir / "log4.txt") != 0, true);

  write_file(dir / "small.json", tiny_config(dir / "run2").dump());
  EXPECT_EQ(run_cli("gen-data --quiet --config " + (dir / "small.json").string(), dir / "log5.txt"), 0);
  EXPECT_EQ(run_cli("gen-data --quiet --config " + (dir / "small.json").string(), dir / "log6.txt"),
            exit_code(ErrorCategory::state));
  EXPECT_EQ(run_cli("gen-data --quiet --force --seed 5 --config " + (dir / "small.json").string(), dir / "log7.txt"), 0);
  const json snap = json::parse(read_file(dir / "run2" / "data" / "config.json"));
  EXPECT_EQ(snap["seed"], 5);
}

}  // namespace
}  // namespace attriqe::pipeline
