#pragma once

// Hand-designed features of (reasoning state, candidate decision). They read
// only what an agent could see: the query text, the API documentation
// (tool verb/noun/provider/parameter types) and the interleaved history.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "toolpref/trajectory/tree.hpp"
#include "toolpref/world/world.hpp"

namespace toolpref {

inline constexpr std::size_t kFeatureDim = 16;
using FeatureVector = std::array<double, kFeatureDim>;

enum Feature : std::size_t {
  kNounMatch,
  kVerbMatch,
  kProviderMatch,
  kTypeOk,
  kMissingArg,
  kClauseResolved,
  kRepeatFailed,
  kToolFailedBefore,
  kRepeatOk,
  kAnswerCoverage,
  kAnswerReady,
  kAnswerNothing,
  kGiveUpAfterError,
  kGiveUpDepth,
  kFinishAnswerBias,
  kFinishGiveUpBias,
};

const std::array<const char*, kFeatureDim>& feature_names();
// Hash of the feature names and dimension; checkpoints carry it.
std::uint64_t feature_schema_hash();

// One request sentence of a query, e.g.
//   Find the reviews on shopscraper for "B0ABCDEFGH".
//   Then get the prices for the reviews reference.
struct QueryClause {
  std::string verb;  // lower-case verb phrase
  std::string noun;
  std::optional<std::string> provider;
  std::optional<std::string> value;     // quoted literal
  std::optional<std::string> ref_noun;  // value comes from the response of a <ref_noun> call

  friend bool operator==(const QueryClause&, const QueryClause&) = default;
};

std::vector<QueryClause> parse_query_clauses(const std::string& query);

class FeatureContext {
 public:
  FeatureContext(const World& world, std::string instruction);

  const World& world() const { return *world_; }
  const std::string& instruction() const { return instruction_; }
  const std::vector<QueryClause>& clauses() const { return clauses_; }

  // Per-history summary shared by every candidate at that state.
  struct StateInfo {
    std::vector<std::optional<std::string>> clause_values;
    std::vector<bool> covered;
    std::size_t n_covered = 0;
    std::vector<ApiAction> failed_actions;
    std::vector<ApiAction> ok_actions;
    std::vector<std::string> failed_tools;
    bool last_error = false;
    std::size_t depth = 0;
  };

  StateInfo analyze(const std::vector<HistoryStep>& history) const;
  FeatureVector featurize(const StateInfo& info, const Decision& decision) const;
  std::vector<FeatureVector> featurize_all(const std::vector<HistoryStep>& history,
                                           const std::vector<Decision>& decisions) const;

 private:
  std::optional<std::size_t> bind_clause(const StateInfo& info, const ToolSpec& tool, const ApiAction& action) const;

  const World* world_;
  std::string instruction_;
  std::vector<QueryClause> clauses_;
};

FeatureVector featurize(const FeatureContext& ctx, const ReasoningState& state, const Decision& decision);

}  // namespace toolpref
