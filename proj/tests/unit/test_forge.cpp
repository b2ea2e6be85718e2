#include <gtest/gtest.h>

#include <map>
#include <set>

#include "support/test_support.hpp"
#include "toolpref/errors.hpp"
#include "toolpref/forge/forge.hpp"

namespace toolpref {
namespace {

using testing::load_golden_tree;
using testing::PairKey;

ApiDocs golden_docs() {
  ApiDocs d;
  for (const char* t : {"getalerts_for_skycast", "getforecast_for_skycast", "getforecast_for_weatherhub",
                        "getlocation_for_skycast", "listcities_for_skycast", "searchcity_for_skycast"}) {
    d[t] = std::string(t) + ": weather tool";
  }
  return d;
}

ApiDocs random_docs() {
  ApiDocs d;
  for (int i = 0; i < 4; ++i) d["tool_" + std::to_string(i)] = "tool_" + std::to_string(i) + ": test tool";
  return d;
}

std::vector<TreeNode> chain(bool with_failures) {
  std::vector<TreeNode> n(3);
  n[0].id = 0;
  n[0].kind = NodeKind::Root;
  n[1].id = 1;
  n[1].parent = 0;
  n[1].kind = NodeKind::Call;
  n[1].action = ApiAction{"tool_0", {{"q", "a"}}};
  n[1].response = ApiResponse{ResponseStatus::Ok, "{}"};
  n[2].id = 2;
  n[2].parent = 1;
  n[2].kind = NodeKind::FinishAnswer;
  n[2].action = Decision::answer().action;
  n[2].final_answer = "done";
  if (with_failures) {
    TreeNode g;
    g.id = 3;
    g.parent = 1;
    g.kind = NodeKind::FinishGiveUp;
    g.action = Decision::give_up().action;
    n.push_back(g);
  }
  return n;
}

// ---- golden tree -------------------------------------------------------------

TEST(ForgeGolden, StepwiseYieldsExactlyThreePairs) {
  const auto pairs = extract_stepwise(load_golden_tree());
  ASSERT_EQ(pairs.size(), 3u);
  const std::vector<PairKey> expect{
      {0, {0, 9}, {0, 1}},
      {0, {0, 9}, {0, 3}},
      {9, {0, 9, 12}, {0, 9, 10}},
  };
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(PairKey(pairs[i].branch_node, pairs[i].preferred_path, pairs[i].dispreferred_path), expect[i]);
    EXPECT_EQ(pairs[i].granularity, Granularity::StepWise);
    ASSERT_EQ(pairs[i].preferred.size(), 1u);
    ASSERT_EQ(pairs[i].dispreferred.size(), 1u);
  }
  EXPECT_EQ(pairs[2].preferred[0].decision.action.tool_name, "getforecast_for_skycast");
  EXPECT_EQ(pairs[2].dispreferred[0].decision.action.tool_name, "getforecast_for_weatherhub");
}

TEST(ForgeGolden, PathwiseYieldsOneSuccessTimesFourFailures) {
  const auto pairs = extract_pathwise(load_golden_tree());
  ASSERT_EQ(pairs.size(), 4u);
  const std::vector<NodeId> win{0, 9, 12, 13, 14, 15};
  const std::vector<std::vector<NodeId>> losses{{0, 1, 2}, {0, 3, 4, 5, 6}, {0, 3, 7, 8}, {0, 9, 10, 11}};
  const std::vector<NodeId> branches{0, 0, 0, 9};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(pairs[i].preferred_path, win);
    EXPECT_EQ(pairs[i].dispreferred_path, losses[i]);
    EXPECT_EQ(pairs[i].branch_node, branches[i]);
    EXPECT_EQ(pairs[i].granularity, Granularity::PathWise);
  }
  // payload = everything after the branch node
  EXPECT_EQ(pairs[3].preferred.size(), 4u);
  EXPECT_EQ(pairs[3].dispreferred.size(), 2u);
  EXPECT_EQ(pairs[3].context_history.size(), 1u);
}

TEST(ForgeGolden, DeeperPairCarriesOnePriorStep) {
  const auto pairs = extract_stepwise(load_golden_tree());
  const FormattedSample deep = format_sample(pairs[2], golden_docs());
  std::size_t n = 0;
  for (auto p = deep.input_block.find("Action:"); p != std::string::npos; p = deep.input_block.find("Action:", p + 1))
    ++n;
  EXPECT_EQ(n, 1u);
  const FormattedSample root = format_sample(pairs[0], golden_docs());
  EXPECT_NE(root.input_block.find("History: (none)"), std::string::npos);
  EXPECT_EQ(root.input_block.find("Action:"), std::string::npos);
}

TEST(ForgeGolden, CorpusOfOneTreeKeepsItAndScrubs) {
  const auto corpus = build_corpus({load_golden_tree()}, Granularity::StepWise, golden_docs());
  EXPECT_EQ(corpus.records.size(), 3u);
  EXPECT_EQ(corpus.stats.trees_in, 1u);
  EXPECT_EQ(corpus.stats.trees_kept, 1u);
  EXPECT_EQ(corpus.stats.pairs_emitted, 3u);
  for (const auto& r : corpus.records) {
    const std::string all = r.sample.bytes();
    EXPECT_EQ(all.find("previously tried"), std::string::npos);
  }
}

TEST(ForgeGolden, SftExpandsTheSuccessPath) {
  const auto ex = resample_sft_set({scrub_diversity_prompts(load_golden_tree())}, 1, 3);
  std::vector<NodeId> nodes;
  for (const auto& e : ex) nodes.push_back(e.node);
  // one example per decision on 0 -> 15, the answer included
  EXPECT_EQ(nodes, (std::vector<NodeId>{9, 12, 13, 14, 15}));
  EXPECT_EQ(ex.back().target.kind, NodeKind::FinishAnswer);
  EXPECT_TRUE(ex.front().state.history.empty());
  EXPECT_EQ(ex.back().state.history.size(), 4u);
}

TEST(ForgeGolden, MissingDocThrows) {
  EXPECT_THROW(format_sample(extract_stepwise(load_golden_tree())[0], ApiDocs{}), MissingDoc);
}

// ---- small cases -----------------------------------------------------------------

TEST(ForgeCases, LinearChainHasNoPairs) {
  const DecisionTree t = DecisionTree::build("q", chain(false));
  EXPECT_TRUE(extract_stepwise(t).empty());
  EXPECT_TRUE(extract_pathwise(t).empty());
}

TEST(ForgeCases, TwoSuccessThreeFailureGivesSix) {
  Rng rng(1);
  int checked = 0;
  for (int i = 0; i < 5000 && checked < 20; ++i) {
    const auto nodes = testing::random_tree_nodes(rng);
    if (testing::oracle_paths(nodes, true).size() != 2 || testing::oracle_paths(nodes, false).size() != 3) continue;
    EXPECT_EQ(extract_pathwise(DecisionTree::build("q", nodes)).size(), 6u);
    ++checked;
  }
  EXPECT_EQ(checked, 20);
}

TEST(ForgeCases, CorpusWithoutFailedBranchesIsEmpty) {
  const DecisionTree t = DecisionTree::build("q", chain(false), {}, "c");
  const auto corpus = build_corpus({t, t}, Granularity::StepWise, random_docs());
  EXPECT_TRUE(corpus.records.empty());
  EXPECT_EQ(corpus.stats.trees_kept, 0u);
  EXPECT_EQ(corpus.stats.trees_in, 2u);
}

TEST(ForgeCases, IdenticalTreesAreDeduplicated) {
  const DecisionTree t = DecisionTree::build("q", chain(true), {}, "c");
  const auto corpus = build_corpus({t, t}, Granularity::StepWise, random_docs());
  EXPECT_EQ(corpus.stats.pairs_extracted, 2u);
  EXPECT_EQ(corpus.stats.duplicates_dropped, 1u);
  EXPECT_EQ(corpus.records.size(), 1u);
}

TEST(ForgeCases, SftZeroInstructionsAndShortfall) {
  const std::vector<DecisionTree> trees{load_golden_tree()};
  EXPECT_TRUE(resample_sft_set(trees, 0, 1).empty());
  EXPECT_THROW(resample_sft_set(trees, 2, 1), InsufficientData);
}

TEST(ForgeCases, GranularityNames) {
  EXPECT_EQ(granularity_from_string(to_string(Granularity::StepWise)), Granularity::StepWise);
  EXPECT_EQ(granularity_from_string(to_string(Granularity::PathWise)), Granularity::PathWise);
  EXPECT_THROW(granularity_from_string("diagonal"), Error);
}

TEST(ForgeCases, WorldDocsCoverEveryTool) {
  const World w = gen_world(testing::small_world_config());
  const ApiDocs d = api_docs_from_world(w);
  EXPECT_EQ(d.size(), w.tools().size());
  for (const auto& t : w.tools()) EXPECT_TRUE(d.count(t.name));
}

// ---- properties ----------------------------------------------------------------

TEST(ForgeProperty, StepwiseMatchesTripleOracle) {
  Rng rng(31);
  testing::RandomTreeOptions o;
  o.max_nodes = 12;
  for (int i = 0; i < 500; ++i) {
    const auto nodes = testing::random_tree_nodes(rng, o);
    const DecisionTree t = DecisionTree::build("q", nodes);
    EXPECT_EQ(testing::pair_keys(extract_stepwise(t)), testing::oracle_stepwise(nodes));
  }
}

TEST(ForgeProperty, PathwiseMatchesProductOracle) {
  Rng rng(32);
  for (int i = 0; i < 500; ++i) {
    const auto nodes = testing::random_tree_nodes(rng);
    const DecisionTree t = DecisionTree::build("q", nodes);
    EXPECT_EQ(testing::pair_keys(extract_pathwise(t)), testing::oracle_pathwise(nodes));
  }
}

TEST(ForgeProperty, StepwiseOrderIsByBranchThenChildOrder) {
  Rng rng(33);
  for (int i = 0; i < 300; ++i) {
    const DecisionTree t = testing::random_tree(rng);
    const auto pairs = extract_stepwise(t);
    auto pos = [&](NodeId parent, NodeId child) {
      const auto& ch = t.node(parent).children;
      return std::find(ch.begin(), ch.end(), child) - ch.begin();
    };
    for (std::size_t k = 1; k < pairs.size(); ++k) {
      const auto& a = pairs[k - 1];
      const auto& b = pairs[k];
      const auto ka = std::make_tuple(a.branch_node, pos(a.branch_node, a.preferred_path.back()),
                                      pos(a.branch_node, a.dispreferred_path.back()));
      const auto kb = std::make_tuple(b.branch_node, pos(b.branch_node, b.preferred_path.back()),
                                      pos(b.branch_node, b.dispreferred_path.back()));
      EXPECT_LT(ka, kb);
    }
    EXPECT_EQ(extract_stepwise(t), pairs);
  }
}

TEST(ForgeProperty, CorpusTotalsEqualPerTreeOracleCounts) {
  Rng rng(34);
  std::vector<DecisionTree> trees;
  std::size_t expect = 0;
  for (int i = 0; i < 100; ++i) {
    const auto nodes = testing::random_tree_nodes(rng);
    const DecisionTree t = DecisionTree::build("query " + std::to_string(i), nodes, {}, "t" + std::to_string(i));
    if (has_failed_branch(t)) expect += testing::oracle_stepwise(nodes).size();
    trees.push_back(t);
  }
  const auto corpus = build_corpus(trees, Granularity::StepWise, random_docs());
  EXPECT_EQ(corpus.stats.pairs_extracted, expect);
  EXPECT_EQ(corpus.stats.pairs_emitted + corpus.stats.duplicates_dropped, expect);
  EXPECT_EQ(corpus.records.size(), corpus.stats.pairs_emitted);
  std::set<std::string> bytes;
  for (const auto& r : corpus.records) EXPECT_TRUE(bytes.insert(r.sample.bytes()).second);
}

TEST(ForgeProperty, SamplingIsDeterministicAndWholeTree) {
  Rng rng(35);
  std::vector<DecisionTree> trees;
  for (int i = 0; i < 60; ++i) {
    trees.push_back(DecisionTree::build("query " + std::to_string(i), testing::random_tree_nodes(rng), {},
                                        "t" + std::to_string(i)));
  }
  const auto corpus = build_corpus(trees, Granularity::StepWise, random_docs());
  ASSERT_GT(corpus.records.size(), 6u);
  std::map<std::string, std::size_t> per_tree;
  for (const auto& r : corpus.records) ++per_tree[r.pair.source_tree];

  const auto a = sample_pairs_by_instruction(corpus.records, 5, 9);
  const auto b = sample_pairs_by_instruction(corpus.records, 5, 9);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].sample, b[i].sample);
  EXPECT_GE(a.size(), 5u);
  std::map<std::string, std::size_t> got;
  for (const auto& r : a) ++got[r.pair.source_tree];
  for (const auto& [tree, n] : got) EXPECT_EQ(n, per_tree[tree]);

  const auto q = qualifying_trees(trees);
  const auto s1 = resample_sft_set(q, 4, 2);
  const auto s2 = resample_sft_set(q, 4, 2);
  EXPECT_EQ(s1, s2);
  std::set<std::string> sources;
  for (const auto& e : s1) sources.insert(e.source_tree);
  EXPECT_EQ(sources.size(), 4u);
}

}  // namespace
}  // namespace toolpref
