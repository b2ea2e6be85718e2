#include <gtest/gtest.h>

#include <cmath>

#include "support/test_support.hpp"
#include "toolpref/dfsdt/engine.hpp"
#include "toolpref/errors.hpp"
#include "toolpref/eval/metrics.hpp"

namespace toolpref {
namespace {

const World& default_world() {
  static const World w = gen_world(WorldConfig{});
  return w;
}

DecisionTree root_only() {
  TreeNode r;
  r.kind = NodeKind::Root;
  return DecisionTree::build("q", {r});
}

RolloutResult bare(const std::string& task, RolloutOutcome o, std::optional<std::string> answer, int actions) {
  RolloutResult r{task, root_only()};
  r.outcome = o;
  r.final_answer = std::move(answer);
  r.actions_used = actions;
  return r;
}

// Linear chain: the given calls executed in order, then Finish (answer or give up).
RolloutResult chain(const World& w, const Task& t, const std::vector<ApiAction>& calls, RolloutOutcome o) {
  std::vector<TreeNode> nodes(1);
  nodes[0].kind = NodeKind::Root;
  std::vector<HistoryStep> h;
  for (const auto& a : calls) {
    TreeNode n;
    n.id = static_cast<NodeId>(nodes.size());
    n.parent = n.id - 1;
    n.kind = NodeKind::Call;
    n.action = a;
    n.response = execute(w, t, a);
    h.push_back({a, *n.response});
    nodes.push_back(n);
  }
  TreeNode f;
  f.id = static_cast<NodeId>(nodes.size());
  f.parent = f.id - 1;
  std::optional<std::string> answer;
  if (o == RolloutOutcome::Pass) {
    f.kind = NodeKind::FinishAnswer;
    f.action = Decision::answer().action;
    answer = compose_final_answer(w, t, h);
    f.final_answer = answer;
    nodes.push_back(f);
  } else if (o == RolloutOutcome::GiveUp) {
    f.kind = NodeKind::FinishGiveUp;
    f.action = Decision::give_up().action;
    nodes.push_back(f);
  }
  RolloutResult r{t.id, DecisionTree::build(t.query, nodes)};
  r.outcome = o;
  r.final_answer = answer;
  r.actions_used = static_cast<int>(nodes.size()) - 1;
  return r;
}

ApiAction goal_call(const SubGoal& g) { return ApiAction{g.tool, {{g.param, g.value}}}; }

const Task& task_with_goals(const World& w, std::size_t n, bool solvable) {
  for (const auto& t : w.tasks()) {
    if (t.scenario && t.required_calls.size() == n && t.solvable == solvable) return t;
  }
  throw std::runtime_error("no such task");
}

std::vector<RolloutResult> rollouts(const World& w, const SearchPolicy& p, std::uint64_t seed) {
  std::vector<const Task*> tasks;
  for (Scenario s : kAllScenarios) {
    for (const Task* t : w.scenario_tasks(s)) tasks.push_back(t);
  }
  return batch_rollout(p, w, tasks, SearchBudget{}, seed);
}

// ---- frozen values ---------------------------------------------------------------

TEST(EvalFrozen, ImprovementFixtures) {
  EXPECT_NEAR(step_improvement_pct(32.06, 22.62), 29.44, 0.01);
  EXPECT_NEAR(step_improvement_pct(27.22, 22.39), 17.74, 0.01);
  EXPECT_EQ(step_improvement_pct(13.5, 13.5), 0.0);
  EXPECT_THROW(step_improvement_pct(0.0, 1.0), ZeroBaseline);
  EXPECT_NEAR(rate_improvement_points(0.40, 0.52), 12.0, 1e-12);
}

TEST(EvalFrozen, PassRateFourResults) {
  const std::vector<RolloutResult> rs{
      bare("a", RolloutOutcome::Pass, "Here it is.", 3),
      bare("b", RolloutOutcome::Pass, "sorry I cannot", 3),
      bare("c", RolloutOutcome::Pass, "Done: record-1.", 3),
      bare("d", RolloutOutcome::GiveUp, std::nullopt, 3),
  };
  EXPECT_DOUBLE_EQ(pass_rate(rs), 0.5);
  EXPECT_DOUBLE_EQ(pass_rate(rs, {}), 0.75);
}

TEST(EvalFrozen, AllGiveUpIsZero) {
  const std::vector<RolloutResult> rs{bare("a", RolloutOutcome::GiveUp, std::nullopt, 1),
                                      bare("b", RolloutOutcome::BudgetExhausted, std::nullopt, 200)};
  EXPECT_EQ(pass_rate(rs), 0.0);
  EXPECT_EQ(pass_rate({}), 0.0);
}

TEST(EvalFrozen, AverageStepsTenAndThirty) {
  const std::vector<RolloutResult> rs{bare("a", RolloutOutcome::Pass, "ok", 10),
                                      bare("b", RolloutOutcome::GiveUp, std::nullopt, 30),
                                      bare("c", RolloutOutcome::BudgetExhausted, std::nullopt, 200)};
  EXPECT_DOUBLE_EQ(avg_steps(rs), 20.0);
  EXPECT_DOUBLE_EQ(avg_steps(rs, StepsScope::PassOnly), 10.0);
}

TEST(EvalFrozen, AllBudgetExhaustedHasNoSteps) {
  const std::vector<RolloutResult> rs{bare("a", RolloutOutcome::BudgetExhausted, std::nullopt, 200)};
  EXPECT_THROW(avg_steps(rs), NoQualifyingSamples);
  EXPECT_FALSE(try_avg_steps(rs).has_value());
}

TEST(EvalFrozen, OracleJudgePrefersMoreGoals) {
  const World& w = default_world();
  const Task& t = task_with_goals(w, 3, true);
  std::vector<ApiAction> all;
  for (const auto& g : t.required_calls) all.push_back(goal_call(g));
  const RolloutResult a = chain(w, t, all, RolloutOutcome::Pass);
  const RolloutResult b = chain(w, t, {all[0]}, RolloutOutcome::Pass);
  const OracleJudge judge(w);
  EXPECT_DOUBLE_EQ(judge.answer_credit(a), 1.0);
  EXPECT_DOUBLE_EQ(judge.answer_credit(b), 1.0 / 3.0);
  EXPECT_EQ(judge.compare(a, b).verdict, Verdict::PreferA);
  EXPECT_EQ(judge.compare(b, a).verdict, Verdict::PreferB);
  EXPECT_EQ(judge.compare(a, a).verdict, Verdict::Tie);
}

TEST(EvalFrozen, OracleJudgeBreaksTiesOnActions) {
  const World& w = default_world();
  const Task& t = task_with_goals(w, 2, true);
  std::vector<ApiAction> all;
  for (const auto& g : t.required_calls) all.push_back(goal_call(g));
  auto longer = all;
  longer.insert(longer.begin(), all[0]);
  const OracleJudge judge(w);
  EXPECT_EQ(judge.compare(chain(w, t, all, RolloutOutcome::Pass), chain(w, t, longer, RolloutOutcome::Pass)).verdict,
            Verdict::PreferA);
}

TEST(EvalFrozen, KeywordJudge) {
  const KeywordJudge judge;
  EXPECT_EQ(judge.compare(bare("a", RolloutOutcome::Pass, "fine", 2), bare("a", RolloutOutcome::Pass, "Sorry", 2))
                .verdict,
            Verdict::PreferA);
  EXPECT_EQ(judge.compare(bare("a", RolloutOutcome::GiveUp, std::nullopt, 2),
                          bare("a", RolloutOutcome::GiveUp, std::nullopt, 9))
                .verdict,
            Verdict::Tie);
}

// ---- solvability-aware pass rate ----------------------------------------------------

TEST(EvalPassV2, ResolvedAnswerCounts) {
  const World& w = default_world();
  const Task& t = task_with_goals(w, 2, true);
  std::vector<ApiAction> all;
  for (const auto& g : t.required_calls) all.push_back(goal_call(g));
  EXPECT_TRUE(passes_v2(chain(w, t, all, RolloutOutcome::Pass), w));
  EXPECT_FALSE(passes_v2(chain(w, t, {all[0]}, RolloutOutcome::Pass), w));
}

TEST(EvalPassV2, AnswerOnUnsolvableTaskCounts) {
  const World& w = default_world();
  const Task& t = task_with_goals(w, 1, false);
  const RolloutResult r = chain(w, t, {goal_call(t.required_calls[0])}, RolloutOutcome::Pass);
  EXPECT_TRUE(contains_keyword(*r.final_answer, {"sorry"}));
  EXPECT_TRUE(passes_v2(r, w));
  EXPECT_FALSE(passes_keyword_filter(r, TreeOptions{}.meaningless_keywords));
}

TEST(EvalPassV2, GiveUpNeverCounts) {
  const World& w = default_world();
  for (bool solvable : {true, false}) {
    const Task& t = task_with_goals(w, 1, solvable);
    EXPECT_FALSE(passes_v2(chain(w, t, {goal_call(t.required_calls[0])}, RolloutOutcome::GiveUp), w));
  }
}

// ---- win rate ------------------------------------------------------------------------

TEST(EvalWinRate, IdenticalSetsGiveHalf) {
  const World& w = default_world();
  const auto rs = rollouts(w, RandomPolicy{}, 4);
  EXPECT_DOUBLE_EQ(win_rate(rs, rs, OracleJudge(w)), 0.5);
}

TEST(EvalWinRate, ComplementaryAcrossSides) {
  const World& w = default_world();
  const auto a = rollouts(w, RandomPolicy{}, 5);
  Rng g(1);
  const auto b = rollouts(w, LearnedPolicy(testing::random_params(g)), 6);
  const OracleJudge judge(w);
  EXPECT_NEAR(win_rate(a, b, judge) + win_rate(b, a, judge), 1.0, 1e-12);
}

TEST(EvalWinRate, UnpairedInputsThrow) {
  const std::vector<RolloutResult> a{bare("x", RolloutOutcome::GiveUp, std::nullopt, 1)};
  const std::vector<RolloutResult> b{bare("y", RolloutOutcome::GiveUp, std::nullopt, 1)};
  const KeywordJudge judge;
  EXPECT_THROW(win_rate(a, b, judge), UnpairedTask);
  EXPECT_THROW(win_rate(a, {}, judge), UnpairedTask);
  EXPECT_THROW(win_rate({a[0], a[0]}, {a[0], a[0]}, judge), UnpairedTask);
}

// ---- reports --------------------------------------------------------------------------

TEST(EvalReport, SixScenariosAndArithmeticAverage) {
  const World& w = default_world();
  const auto base = rollouts(w, RandomPolicy{}, 1);
  Rng g(2);
  const auto rs = rollouts(w, LearnedPolicy(testing::random_params(g)), 2);
  const OracleJudge judge(w);
  const MetricsReport r = evaluate("m", w, rs, {}, &base, &judge);
  ASSERT_EQ(r.scenarios.size(), 6u);
  EXPECT_EQ(r.judge, "oracle");
  double pr = 0, wr = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& c = r.scenarios[i];
    EXPECT_EQ(c.scenario, to_string(kAllScenarios[i]));
    EXPECT_EQ(c.n, 60u);
    EXPECT_GE(c.pass_rate, 0.0);
    EXPECT_LE(c.pass_rate, 1.0);
    ASSERT_TRUE(c.win_rate.has_value());
    pr += c.pass_rate;
    wr += *c.win_rate;
  }
  EXPECT_EQ(r.average.scenario, "Avg");
  EXPECT_NEAR(r.average.pass_rate, pr / 6, 1e-12);
  EXPECT_NEAR(*r.average.win_rate, wr / 6, 1e-12);

  const MetricsReport back = report_from_jsonl(report_to_jsonl(r, Json{{"rollout_seed", 2}}));
  EXPECT_EQ(back.model, "m");
  ASSERT_EQ(back.scenarios.size(), 6u);
  EXPECT_DOUBLE_EQ(back.average.pass_rate, r.average.pass_rate);
  EXPECT_EQ(back.scenarios[3].avg_steps, r.scenarios[3].avg_steps);
}

TEST(EvalReport, TrainingTasksRejected) {
  const World& w = default_world();
  const Task& t = *w.training_tasks().front();
  const std::vector<RolloutResult> rs{bare(t.id, RolloutOutcome::GiveUp, std::nullopt, 1)};
  EXPECT_THROW(evaluate("m", w, rs), UnknownTask);
}

TEST(EvalReport, SeedSummaryRecomputes) {
  const World& w = default_world();
  std::vector<MetricsReport> per_seed;
  std::vector<double> avgs;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    per_seed.push_back(evaluate("rand", w, rollouts(w, RandomPolicy{}, s)));
    avgs.push_back(per_seed.back().average.pass_rate);
  }
  const SeedSummary sum = summarize_seeds(per_seed);
  const MeanStd m = mean_std(avgs);
  EXPECT_NEAR(sum.cells.at("pass_rate").at("Avg").mean, m.mean, 1e-12);
  EXPECT_NEAR(sum.cells.at("pass_rate").at("Avg").stddev, m.stddev, 1e-12);
  EXPECT_EQ(sum.cells.at("pass_rate").at("Avg").n, 3u);
  const std::string table = render_summary_table({sum}, "pass_rate");
  EXPECT_NE(table.find("rand"), std::string::npos);
  EXPECT_NE(table.find("±"), std::string::npos);
}

TEST(EvalReport, MeanStdUsesSampleDeviation) {
  const MeanStd m = mean_std({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.stddev, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(mean_std({7.0}).stddev, 0.0);
}

TEST(EvalReport, TableMarksMissingCells) {
  const World& w = default_world();
  const MetricsReport r = evaluate("plain", w, rollouts(w, RandomPolicy{}, 1));
  const std::string t = render_table({r}, "win_rate");
  EXPECT_NE(t.find("plain"), std::string::npos);
  EXPECT_NE(t.find("-"), std::string::npos);
  EXPECT_NE(render_table({r}, "pass_rate").find("G3-Ins"), std::string::npos);
}

// ---- properties -----------------------------------------------------------------------

TEST(EvalProperty, DefinitionsAgreeWhenEverythingIsSolvable) {
  WorldConfig c = testing::small_world_config(8);
  c.error_rate = 0.0;
  c.inaccessible_fraction = 0.0;
  const World w = gen_world(c);
  Rng g(3);
  for (int i = 0; i < 5; ++i) {
    const auto rs = rollouts(w, LearnedPolicy(testing::random_params(g, 2.0)), i);
    for (const auto& r : rs) {
      if (passes_keyword_filter(r, TreeOptions{}.meaningless_keywords)) {
        EXPECT_TRUE(OracleJudge(w).answer_credit(r) == 1.0);
      }
    }
    EXPECT_EQ(pass_rate(rs), pass_rate_v2(rs, w));
  }
}

TEST(EvalProperty, RatesStayInUnitInterval) {
  const World& w = default_world();
  Rng g(4);
  for (int i = 0; i < 3; ++i) {
    const auto rs = rollouts(w, LearnedPolicy(testing::random_params(g)), i);
    for (double x : {pass_rate(rs), pass_rate_v2(rs, w)}) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
    }
  }
}

}  // namespace
}  // namespace toolpref
