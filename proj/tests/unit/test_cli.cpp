#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "toolpref/cli/commands.hpp"
#include "toolpref/cli/pipeline.hpp"
#include "toolpref/errors.hpp"
#include "toolpref/json.hpp"

namespace toolpref {
namespace {

namespace fs = std::filesystem;

std::vector<Json> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<Json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(Json::parse(line));
  }
  return out;
}

std::size_t data_lines(const fs::path& p) {
  std::size_t n = 0;
  for (const auto& j : read_lines(p)) n += !j.contains("_meta");
  return n;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("toolpref_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Small world, run directory in the temp dir.
  int cli(std::vector<std::string> args, std::vector<std::string> extra_sets = {}) {
    std::vector<std::string> full{"-s", "paths.dir=" + dir_.string(),
                                  "-s", "world.n_categories=4",
                                  "-s", "world.tools_per_category=5",
                                  "-s", "world.tasks_per_scenario=8",
                                  "-s", "world.train_tasks_per_group=40",
                                  "-s", "world.held_out_categories=1",
                                  "-s", "world.held_out_tools_per_category=1"};
    for (const auto& s : extra_sets) {
      full.push_back("-s");
      full.push_back(s);
    }
    full.insert(full.end(), args.begin(), args.end());
    out_.str("");
    err_.str("");
    return run_cli(full, out_, err_);
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

TEST_F(CliTest, GenWorldIsReproducible) {
  ASSERT_EQ(cli({"gen-world"}), kExitOk) << err_.str();
  const std::string first = slurp(dir_ / "world.json");
  ASSERT_EQ(cli({"gen-world"}), kExitOk);
  EXPECT_EQ(slurp(dir_ / "world.json"), first);
  const Json w = Json::parse(first);
  EXPECT_TRUE(w.contains("_meta"));
  EXPECT_EQ(w["_meta"]["config_hash"].get<std::string>().size(), 16u);
  std::set<std::string> scenarios;
  for (const auto& t : w["tasks"]) {
    if (t.contains("scenario") && !t["scenario"].is_null()) scenarios.insert(t["scenario"].get<std::string>());
  }
  EXPECT_EQ(scenarios.size(), 6u);
}

TEST_F(CliTest, BadConfigsExitTwo) {
  EXPECT_EQ(cli({"gen-world"}, {"world.tools_per_category=2"}), kExitValidation);
  EXPECT_NE(err_.str().find("tools_per_category"), std::string::npos);
  EXPECT_EQ(cli({"gen-world"}, {"world.no_such_key=1"}), kExitValidation);
  EXPECT_EQ(cli({"gen-world"}, {"granularity=diagonal"}), kExitValidation);
  EXPECT_EQ(cli({"gen-world"}, {"train.beta=0"}), kExitValidation);

  const fs::path cfg = dir_ / "broken.json";
  std::ofstream(cfg) << "{ not json";
  EXPECT_EQ(cli({"-c", cfg.string(), "gen-world"}), kExitValidation);
  std::ofstream(cfg, std::ios::trunc) << "{\"surprise\": true}";
  EXPECT_EQ(cli({"-c", cfg.string(), "gen-world"}), kExitValidation);
  EXPECT_EQ(cli({"-c", (dir_ / "missing.json").string(), "gen-world"}), kExitValidation);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}), kExitValidation);
  EXPECT_EQ(cli({"fly"}), kExitValidation);
  EXPECT_EQ(cli({"train", "--stage", "everything"}), kExitValidation);
}

TEST_F(CliTest, MissingInputsExitTwo) {
  EXPECT_EQ(cli({"annotate"}), kExitValidation);
  ASSERT_EQ(cli({"gen-world"}), kExitOk);
  EXPECT_EQ(cli({"forge"}), kExitValidation);
}

TEST_F(CliTest, DpoWithoutSftCheckpointFails) {
  ASSERT_EQ(cli({"gen-world"}), kExitOk);
  ASSERT_EQ(cli({"annotate"}), kExitOk);
  ASSERT_EQ(cli({"forge"}), kExitOk);
  EXPECT_EQ(cli({"train", "--stage", "dpo"}), kExitValidation);
  EXPECT_FALSE(fs::exists(dir_ / "policy_dpo.json"));
}

TEST_F(CliTest, NoiselessAnnotationYieldsNoPairs) {
  ASSERT_EQ(cli({"gen-world"}), kExitOk);
  ASSERT_EQ(cli({"annotate"}, {"expert_noise=0"}), kExitOk);
  ASSERT_EQ(cli({"forge"}, {"expert_noise=0"}), kExitOk);
  EXPECT_EQ(data_lines(dir_ / "pairs.jsonl"), 0u);
  EXPECT_EQ(data_lines(dir_ / "sft.jsonl"), 0u);
}

TEST_F(CliTest, FullPipelineComposes) {
  ASSERT_EQ(cli({"gen-world"}), kExitOk) << err_.str();
  ASSERT_EQ(cli({"annotate"}), kExitOk) << err_.str();
  EXPECT_EQ(data_lines(dir_ / "trees.jsonl"), 120u);  // one tree per training task

  ASSERT_EQ(cli({"forge"}), kExitOk) << err_.str();
  const Json stats = Json::parse(slurp(dir_ / "forge_stats.json"));
  EXPECT_EQ(stats["pairs_sampled"].get<std::size_t>(), data_lines(dir_ / "pairs.jsonl"));
  EXPECT_EQ(stats["sft_examples"].get<std::size_t>(), data_lines(dir_ / "sft.jsonl"));
  EXPECT_GT(stats["pairs_emitted"].get<std::size_t>(), 0u);
  EXPECT_EQ(stats["_meta"]["command"], "forge");

  ASSERT_EQ(cli({"train", "--stage", "both"}), kExitOk) << err_.str();
  EXPECT_TRUE(fs::exists(dir_ / "policy_sft.json"));
  EXPECT_TRUE(fs::exists(dir_ / "policy_dpo.json"));
  EXPECT_GT(data_lines(dir_ / "train_sft.jsonl"), 0u);
  const auto dpo_log = read_lines(dir_ / "train_dpo.jsonl");
  const Json* first = nullptr;
  for (const auto& j : dpo_log) {
    if (!j.contains("_meta")) {
      first = &j;
      break;
    }
  }
  ASSERT_NE(first, nullptr);
  EXPECT_NEAR((*first)["loss"].get<double>(), std::numbers::ln2, 1e-9);

  const std::string sft = (dir_ / "policy_sft.json").string();
  const std::string dpo = (dir_ / "policy_dpo.json").string();
  ASSERT_EQ(cli({"eval", "--checkpoint", sft, "--baseline", sft, "--label", "self"}), kExitOk) << err_.str();
  const auto self = read_lines(dir_ / "reports" / "self.jsonl");
  ASSERT_EQ(self.size(), 7u);  // six scenarios and the average
  for (const auto& line : self) {
    EXPECT_DOUBLE_EQ(line["win_rate"].get<double>(), 0.5);
    EXPECT_TRUE(line.contains("config_hash"));
  }

  ASSERT_EQ(cli({"rollout", "--checkpoint", dpo, "--label", "dpo_r"}), kExitOk) << err_.str();
  EXPECT_TRUE(fs::exists(dir_ / "rollouts" / "dpo_r.jsonl"));
  ASSERT_EQ(cli({"eval", "--rollouts", (dir_ / "rollouts" / "dpo_r.jsonl").string(), "--label", "stored"}), kExitOk)
      << err_.str();

  ASSERT_EQ(cli({"eval", "--checkpoint", sft, "--label", "sft", "--seeds", "1,2,3"}), kExitOk) << err_.str();
  ASSERT_EQ(cli({"eval", "--checkpoint", dpo, "--baseline", sft, "--label", "dpo", "--seeds", "1,2,3"}), kExitOk);
  EXPECT_NE(out_.str().find("±"), std::string::npos);
  const Json summary = Json::parse(slurp(dir_ / "reports" / "dpo.summary.json"));
  // recompute the average pass-rate mean from the per-seed lines
  double sum = 0;
  int n = 0;
  for (const auto& line : read_lines(dir_ / "reports" / "dpo.jsonl")) {
    if (line["scenario"] == "Avg") {
      sum += line["pass_rate"].get<double>();
      ++n;
    }
  }
  ASSERT_EQ(n, 3);
  EXPECT_NEAR(summary["cells"]["pass_rate"]["Avg"]["mean"].get<double>(), sum / 3, 1e-12);

  const std::string a = (dir_ / "reports" / "sft.jsonl").string();
  const std::string b = (dir_ / "reports" / "dpo.jsonl").string();
  EXPECT_EQ(cli({"report", "-i", a, "-i", b, "--metric", "all"}), kExitOk);
  EXPECT_EQ(cli({"report", "-i", a, "-i", b, "--baseline-label", "sft", "--treated-label", "dpo", "--min-pass-gain",
                 "1000"}),
            kExitThreshold);
  EXPECT_NE(out_.str().find("FAIL"), std::string::npos);
  EXPECT_EQ(cli({"eval", "--checkpoint", sft, "--label", "gate", "--min-pass-rate", "1.01"}), kExitThreshold);
  EXPECT_EQ(cli({"report", "-i", (dir_ / "nope.jsonl").string()}), kExitValidation);
}

// ---- config plumbing --------------------------------------------------------------

TEST(CliConfig, OverridesParseJsonOrString) {
  Json j = Json::object();
  apply_override(j, "train.beta=0.25");
  apply_override(j, "paths.dir=out/run");
  apply_override(j, "eval_seeds=[3,4]");
  EXPECT_DOUBLE_EQ(j["train"]["beta"].get<double>(), 0.25);
  EXPECT_EQ(j["paths"]["dir"], "out/run");
  const RunConfig c = run_config_from_json(j);
  EXPECT_EQ(c.eval_seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_DOUBLE_EQ(c.train.beta, 0.25);
  // unspecified train keys keep the desk-scale values
  EXPECT_DOUBLE_EQ(c.train.dpo_lr, desk_scale_train_config().dpo_lr);
  EXPECT_THROW(apply_override(j, "novalue"), ConfigError);
  EXPECT_THROW(apply_override(j, "a..b=1"), ConfigError);
}

TEST(CliConfig, HashTracksContent) {
  RunConfig a;
  RunConfig b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 2;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(run_config_to_json(run_config_from_json(run_config_to_json(a))), run_config_to_json(a));
}

}  // namespace
}  // namespace toolpref
