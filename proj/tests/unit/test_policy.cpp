#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support/test_support.hpp"
#include "toolpref/dfsdt/engine.hpp"
#include "toolpref/errors.hpp"
#include "toolpref/policy/features.hpp"
#include "toolpref/policy/policy.hpp"

namespace toolpref {
namespace {

ScoredCandidates uniform_features(std::size_t k) {
  ScoredCandidates sc;
  for (std::size_t i = 0; i < k; ++i) {
    FeatureVector phi{};
    phi[i % kFeatureDim] = 1.0;
    sc.features.push_back(phi);
  }
  return sc;
}

struct WorldFixture : ::testing::Test {
  static const World& world() {
    static const World w = gen_world(testing::small_world_config());
    return w;
  }
  static const Task& task() { return *world().training_tasks().front(); }
};

// ---- frozen values -------------------------------------------------------------

TEST(PolicyFrozen, ZeroWeightsFourCandidatesGiveLogQuarter) {
  const PolicyParams p;
  const ScoredCandidates sc = uniform_features(4);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(log_prob(p, sc, i), std::log(0.25), 1e-15);
}

TEST(PolicyFrozen, QueryClausesParse) {
  const auto c = parse_query_clauses(
      "I need help. Find the reviews on shopscraper for \"B0ABCDEFGH\". Then get the prices for the reviews "
      "reference. Begin!");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].verb, "find");
  EXPECT_EQ(c[0].noun, "reviews");
  EXPECT_EQ(c[0].provider, "shopscraper");
  EXPECT_EQ(c[0].value, "B0ABCDEFGH");
  EXPECT_EQ(c[1].verb, "get");
  EXPECT_EQ(c[1].noun, "prices");
  EXPECT_EQ(c[1].ref_noun, "reviews");
  EXPECT_FALSE(c[1].value.has_value());
}

TEST(PolicyFrozen, FeatureSchemaIsSixteenWide) {
  EXPECT_EQ(kFeatureDim, 16u);
  EXPECT_EQ(feature_names().size(), kFeatureDim);
  EXPECT_EQ(PolicyParams{}.weights.size(), kFeatureDim);
}

// ---- softmax ---------------------------------------------------------------------

TEST(PolicySoftmax, ZeroWeightsGiveUniformLogits) {
  const PolicyParams p;
  Rng rng(3);
  const ScoredCandidates sc = testing::random_candidates(rng, 5);
  for (double l : logits(p, sc)) EXPECT_EQ(l, 0.0);
}

TEST(PolicySoftmax, MaskedCandidatesGetNoMass) {
  Rng rng(4);
  const PolicyParams p = testing::random_params(rng);
  ScoredCandidates sc = testing::random_candidates(rng, 4);
  sc.masked = {false, true, false, true};
  const auto pr = probabilities(p, sc);
  EXPECT_EQ(pr[1], 0.0);
  EXPECT_EQ(pr[3], 0.0);
  EXPECT_NEAR(pr[0] + pr[2], 1.0, 1e-12);
  EXPECT_THROW(log_prob(p, sc, 1), MaskedAction);
  EXPECT_THROW(log_prob(p, sc, 9), MaskedAction);
}

TEST(PolicySoftmax, AllMaskedCannotSample) {
  ScoredCandidates sc = uniform_features(3);
  sc.masked = {true, true, true};
  Rng rng(1);
  EXPECT_THROW(sample_index(PolicyParams{}, sc, rng), EmptyCandidates);
}

TEST(PolicySoftmax, SingleUnmaskedIsAlwaysChosen) {
  ScoredCandidates sc = uniform_features(4);
  sc.masked = {true, true, false, true};
  Rng rng(5);
  Rng prng(6);
  const PolicyParams p = testing::random_params(prng, 5.0);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(sample_index(p, sc, rng), 2u);
}

TEST(PolicySoftmax, SeededDrawsRepeat) {
  Rng g(8);
  const PolicyParams p = testing::random_params(g);
  const ScoredCandidates sc = testing::random_candidates(g, 6);
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_index(p, sc, a), sample_index(p, sc, b));
}

TEST(PolicySoftmax, EmpiricalFrequenciesFollowProbabilities) {
  Rng g(9);
  const PolicyParams p = testing::random_params(g);
  const ScoredCandidates sc = testing::random_candidates(g, 4);
  const auto pr = probabilities(p, sc);
  std::vector<int> counts(4, 0);
  Rng rng(10);
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[sample_index(p, sc, rng)];
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(counts[i] / double(n), pr[i], 0.015);
}

TEST(PolicySoftmax, HighTemperatureFlattens) {
  Rng g(11);
  const PolicyParams p = testing::random_params(g, 3.0);
  const ScoredCandidates sc = testing::random_candidates(g, 5);
  for (double x : probabilities(p, sc, 1e6)) EXPECT_NEAR(x, 0.2, 1e-4);
}

TEST(PolicySoftmax, LargeLogitsStayFinite) {
  PolicyParams p;
  p.weights.assign(kFeatureDim, 800.0);
  const ScoredCandidates sc = uniform_features(3);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(std::isfinite(log_prob(p, sc, i)));
}

// ---- segments --------------------------------------------------------------------

TEST(PolicySegment, LengthOneEqualsStep) {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const PolicyParams p = testing::random_params(rng);
    const RecordedStep s = testing::random_step(rng, 0.3);
    EXPECT_DOUBLE_EQ(segment_log_prob(p, {s}), log_prob(p, s.candidates, s.chosen));
  }
}

TEST(PolicySegment, ConcatenationAddsAndMatchesProduct) {
  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    const PolicyParams p = testing::random_params(rng);
    const auto a = testing::random_segment(rng, 4, 0.2);
    const auto b = testing::random_segment(rng, 4, 0.2);
    auto ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    EXPECT_NEAR(segment_log_prob(p, ab), segment_log_prob(p, a) + segment_log_prob(p, b), 1e-12);
    double prod = 1.0;
    for (const auto& s : ab) {
      double z = 0.0;
      for (std::size_t k = 0; k < s.candidates.features.size(); ++k) {
        if (!s.candidates.is_masked(k)) z += std::exp(dot(p.weights, s.candidates.features[k]));
      }
      prod *= std::exp(dot(p.weights, s.candidates.features[s.chosen])) / z;
    }
    EXPECT_NEAR(segment_log_prob(p, ab), std::log(prod), 1e-10);
  }
}

TEST(PolicySegment, UnrecordedStepThrows) {
  Rng rng(14);
  auto seg = testing::random_segment(rng, 3);
  seg.back().recorded = false;
  EXPECT_THROW(segment_log_prob(PolicyParams{}, seg), MissingCandidateRecord);
}

TEST(PolicyGradient, GradLogProbMatchesFiniteDifferences) {
  Rng rng(15);
  const double h = 1e-5;
  for (int i = 0; i < 100; ++i) {
    PolicyParams p = testing::random_params(rng);
    const auto seg = testing::random_segment(rng, 3, 0.2);
    const auto g = segment_grad_log_prob(p, seg);
    for (std::size_t d = 0; d < kFeatureDim; ++d) {
      PolicyParams up = p, dn = p;
      up.weights[d] += h;
      dn.weights[d] -= h;
      const double fd = (segment_log_prob(up, seg) - segment_log_prob(dn, seg)) / (2 * h);
      EXPECT_NEAR(g[d], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

// ---- features ------------------------------------------------------------------

TEST_F(WorldFixture, FeaturesAreDeterministic) {
  const FeatureContext ctx(world(), task().query);
  const ReasoningState s{task().query, {}};
  for (const auto& d : candidate_decisions(world(), task(), {})) EXPECT_EQ(featurize(ctx, s, d), featurize(ctx, s, d));
}

TEST_F(WorldFixture, RepeatingAFailedCallSetsRepeatFailed) {
  const auto calls = candidate_calls(world(), task(), {});
  ASSERT_FALSE(calls.empty());
  const ApiAction a = calls.front();
  const std::vector<HistoryStep> h{{a, ApiResponse{ResponseStatus::Error, "boom"}}};
  const FeatureContext ctx(world(), task().query);
  const ReasoningState s{task().query, h};
  EXPECT_EQ(featurize(ctx, s, Decision::call(a))[kRepeatFailed], 1.0);
  EXPECT_EQ(featurize(ctx, ReasoningState{task().query, {}}, Decision::call(a))[kRepeatFailed], 0.0);
}

TEST_F(WorldFixture, FinishBiasesAreIndicators) {
  const FeatureContext ctx(world(), task().query);
  const ReasoningState s{task().query, {}};
  EXPECT_EQ(featurize(ctx, s, Decision::answer())[kFinishAnswerBias], 1.0);
  EXPECT_EQ(featurize(ctx, s, Decision::give_up())[kFinishGiveUpBias], 1.0);
  EXPECT_EQ(featurize(ctx, s, Decision::answer())[kFinishGiveUpBias], 0.0);
}

TEST_F(WorldFixture, ScoreAndSampleOverRealCandidates) {
  const FeatureContext ctx(world(), task().query);
  const ReasoningState s{task().query, {}};
  CandidateSet set{candidate_decisions(world(), task(), {}), {}};
  Rng rng(2);
  const PolicyParams p = testing::random_params(rng);
  const Decision d = sample_action(p, ctx, s, set, rng);
  ASSERT_TRUE(set.index_of(d).has_value());
  EXPECT_NEAR(log_prob(p, ctx, s, set, d), log_prob(p, score_candidates(ctx, s, set), *set.index_of(d)), 1e-15);
}

// ---- checkpoints -----------------------------------------------------------------

TEST(PolicyCheckpoint, RoundTripsExactly) {
  Rng rng(16);
  PolicyParams p = testing::random_params(rng);
  p.version_tag = "sft";
  const auto path = std::filesystem::temp_directory_path() / "toolpref_policy_ckpt.json";
  save_checkpoint(p, path.string(), Json{{"note", "x"}});
  EXPECT_EQ(load_checkpoint(path.string()), p);
  std::filesystem::remove(path);
}

TEST(PolicyCheckpoint, SchemaMismatchAndCorruptionRejected) {
  Json j = params_to_json(PolicyParams{});
  j["feature_schema_hash"] = 12345;
  EXPECT_THROW(params_from_json(j), CheckpointError);
  Json k = params_to_json(PolicyParams{});
  k["weights"] = std::vector<double>{1.0, 2.0};
  EXPECT_THROW(params_from_json(k), CheckpointError);
  EXPECT_THROW(params_from_json(Json{{"format", "other"}}), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/ckpt.json"), CheckpointError);
}

}  // namespace
}  // namespace toolpref
