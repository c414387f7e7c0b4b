#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "imic/config.hpp"
#include "imic/error.hpp"
#include "imic/harness.hpp"

using namespace imic;
namespace fs = std::filesystem;

namespace {

std::string small_config(const std::string& mode = "B", int epochs = 1) {
  return R"({
  "schema_version": 1,
  "seed": 42,
  "output_dir": "unused",
  "corpus": {
    "ambient_dim": 8,
    "domain_separation": 3.0,
    "tasks": [
      {"name": "obj", "regime": "coarse-category", "classes": 10, "samples_per_class": 8,
       "test_samples_per_class": 2, "within_class_spread": 0.8},
      {"name": "face", "regime": "fine-identity", "classes": 10, "samples_per_class": 8,
       "test_samples_per_class": 2, "within_class_spread": 0.3},
      {"name": "lq", "regime": "fine-identity-degraded", "classes": 10, "samples_per_class": 8,
       "test_samples_per_class": 2, "within_class_spread": 0.3, "degradation_noise": 1.0,
       "twin": "face"},
      {"name": "body", "regime": "intermediate", "classes": 10, "samples_per_class": 8,
       "test_samples_per_class": 2, "within_class_spread": 0.5}
    ]
  },
  "encoder": {"hidden": [8], "output_dim": 4},
  "optimizer": {"lr": 0.001},
  "curriculum": {"mode": ")" + mode + R"(", "goals": {"obj": 0.9},
                 "steps_per_epoch": 3},
  "training": {"epochs": )" + std::to_string(epochs) + R"(, "pretrain_task": "obj",
               "pretrain_steps": 2}
})";
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("imic_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, ParsesAndResolvesGoals) {
  const auto c = parse_config(small_config());
  EXPECT_EQ(c.corpus.tasks.size(), 4u);
  EXPECT_EQ(c.curriculum.goals, (std::vector<double>{0.9, 1.0, 1.0, 1.0}));
  EXPECT_NE(c.corpus.seed, 0u);
  const auto again = parse_config(dump_config(c));
  EXPECT_EQ(dump_config(again), dump_config(c));
}

TEST(Config, UnknownKeysAndModesAreFieldErrors) {
  std::string text = small_config();
  text.insert(text.find("\"seed\""), "\"sede\": 1, ");
  try {
    parse_config(text);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "sede");
  }
  try {
    parse_config(small_config("Z"));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "curriculum.mode");
  }
  std::string bad_goal = small_config();
  bad_goal.replace(bad_goal.find("\"obj\": 0.9"), 10, "\"ghost\": 0.9");
  EXPECT_THROW(parse_config(bad_goal), ValidationError);
  EXPECT_THROW(parse_config("{not json"), ValidationError);
}

TEST(Run, WritesDeclaredArtifacts) {
  auto c = parse_config(small_config());
  c.output_dir = scratch("run");
  const auto r = run(c);
  EXPECT_TRUE(fs::exists(c.output_dir / "summary.json"));
  const auto summary = nlohmann::json::parse(slurp(c.output_dir / "summary.json"));
  std::vector<std::string> declared = summary["files"];
  EXPECT_EQ(declared, r.files);
  for (const auto& f : declared) EXPECT_TRUE(fs::exists(c.output_dir / f)) << f;
  std::size_t on_disk = 0;
  for (const auto& e : fs::recursive_directory_iterator(c.output_dir))
    on_disk += e.is_regular_file() ? 1 : 0;
  EXPECT_EQ(on_disk, declared.size());
  EXPECT_GT(r.steps, 0);
  EXPECT_TRUE(r.metrics.count("face/verif_acc"));
  fs::remove_all(c.output_dir);
}

TEST(Run, SameSeedSameBytes) {
  auto c = parse_config(small_config("A"));
  c.output_dir = scratch("det_a");
  run(c);
  auto d = c;
  d.output_dir = scratch("det_b");
  run(d);
  for (const char* f : {"metrics.csv", "trace.jsonl", "geometry/angles_obj__face.csv",
                        "geometry/reconstruction.csv", "checkpoint.bin"})
    EXPECT_EQ(slurp(c.output_dir / f), slurp(d.output_dir / f)) << f;
  fs::remove_all(c.output_dir);
  fs::remove_all(d.output_dir);
}

TEST(Run, InvalidConfigLeavesNoArtifacts) {
  auto c = parse_config(small_config());
  c.output_dir = scratch("invalid");
  c.curriculum.identities_per_batch = 1;
  EXPECT_THROW(run(c), ValidationError);
  EXPECT_FALSE(fs::exists(c.output_dir));
}

TEST(Forgetting, ZeroStepsLeavesPretrainedModels) {
  auto c = parse_config(small_config("B", 0));
  c.output_dir = scratch("forget0");
  const auto r = run_forgetting_comparison(c, true);
  EXPECT_EQ(r.finetune_steps, 0);
  ASSERT_EQ(r.table.rows, (std::vector<std::string>{"sequential", "imic-b", "imic-a"}));
  EXPECT_EQ(r.table.columns, default_columns(build_corpus(c.corpus)));
  EXPECT_EQ(r.table.values.cols(), static_cast<Eigen::Index>(r.table.columns.size()));
  for (double d : r.pretrain_drop) EXPECT_EQ(d, 0.0);
  for (Eigen::Index i = 1; i < 3; ++i)
    EXPECT_TRUE((r.table.values.row(i).array() == r.table.values.row(0).array()).all());
  EXPECT_TRUE(fs::exists(c.output_dir / "forgetting.csv"));
  for (const char* f : {"pretrain", "imic-b", "imic-a", "sequential"})
    EXPECT_TRUE(fs::exists(c.output_dir / f / "trace.jsonl"));
  fs::remove_all(c.output_dir);
}

TEST(Forgetting, EqualBudgetsAcrossModels) {
  auto c = parse_config(small_config("B", 2));
  c.output_dir = scratch("forget2");
  const auto r = run_forgetting_comparison(c, true);
  EXPECT_GT(r.finetune_steps, 0);
  auto count_batches = [&](const char* model) {
    std::ifstream in(c.output_dir / model / "trace.jsonl");
    std::string line;
    long steps = 0, batches = 0;
    while (std::getline(in, line)) {
      ++steps;
      batches += nlohmann::json::parse(line)["batches"].get<long>();
    }
    return std::make_pair(steps, batches);
  };
  const auto b = count_batches("imic-b");
  EXPECT_EQ(b.first, r.finetune_steps);
  EXPECT_EQ(count_batches("imic-a"), b);
  EXPECT_EQ(count_batches("sequential"), b);
  fs::remove_all(c.output_dir);
}

TEST(ScorePaperTable, ColumnMaxRowRanksFirst) {
  ScoreTable t;
  t.rows = {"a", "b", "c"};
  t.columns = {"x", "y"};
  t.values.resize(3, 2);
  t.values << 0.5, 0.9, 1.0, 1.0, 0.8, 0.1;
  const auto ranked = score_paper_table(t, IndexMode::kExpert);
  EXPECT_EQ(ranked[0].model, "b");
  EXPECT_EQ(ranked[0].index, 0.0);
  EXPECT_EQ(ranked[2].model, "c");
}

TEST(Evaluate, MetricKeysPerTask) {
  const auto c = parse_config(small_config());
  const auto corpus = build_corpus(c.corpus);
  const auto m = evaluate_model(initial_encoder(c), corpus, c.evaluation, c.seed);
  for (const auto& t : corpus.tasks)
    for (const char* k : {"top1", "top5", "rank1", "rank5", "verif_acc", "tar@far", "auc"}) {
      const auto it = m.find(t.name + "/" + k);
      ASSERT_NE(it, m.end());
      EXPECT_GE(it->second, 0.0);
      EXPECT_LE(it->second, 1.0);
    }
}

#ifdef IMIC_CLI_PATH
TEST(Cli, UnknownModeExitsWithValidationCode) {
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  const auto cfg = dir / "bad.json";
  std::ofstream(cfg) << small_config("Z");
  const auto out = dir / "out";
  const std::string cmd = std::string(IMIC_CLI_PATH) + " run -c " + cfg.string() + " -o " +
                          out.string() + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 2);
  EXPECT_FALSE(fs::exists(out));
  fs::remove_all(dir);
}
#endif
