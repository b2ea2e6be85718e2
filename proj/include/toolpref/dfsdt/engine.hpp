#pragma once

// Depth-first search over a decision tree of tool calls: expand the current
// node with the policy's choice, mask siblings already tried there, back off
// on FinishGiveUp, stop on FinishAnswer or when the action budget runs out.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "toolpref/json.hpp"
#include "toolpref/policy/policy.hpp"
#include "toolpref/trajectory/tree.hpp"
#include "toolpref/world/world.hpp"

namespace toolpref {

enum class BacktrackMode {
  DeepestWithCapacity,  // nearest ancestor that can still take a new child
  ParentOnly,           // the parent, or stop if the parent is exhausted
};

const char* to_string(BacktrackMode m);
BacktrackMode backtrack_mode_from_string(const std::string& s);

struct SearchBudget {
  int max_actions = 200;  // Finish calls count
  int max_children_per_node = 3;
  BacktrackMode backtrack = BacktrackMode::DeepestWithCapacity;

  void validate() const;  // throws ConfigError
};

Json budget_to_json(const SearchBudget& b);
SearchBudget budget_from_json(const Json& j);

enum class RolloutOutcome { Pass, GiveUp, BudgetExhausted };
const char* to_string(RolloutOutcome o);
RolloutOutcome rollout_outcome_from_string(const std::string& s);

struct RolloutResult {
  std::string task_id;
  DecisionTree tree;
  RolloutOutcome outcome = RolloutOutcome::GiveUp;
  std::optional<std::string> final_answer;
  int actions_used = 0;
  std::optional<int> success_path_steps;  // decisions on root -> answer, when Pass
  std::uint64_t seed = 0;
};

// Everything a policy may look at when choosing at a node.
struct DecisionContext {
  const World& world;
  const Task& task;
  const FeatureContext& features;
  const ReasoningState& state;
  const CandidateSet& candidates;
};

class SearchPolicy {
 public:
  virtual ~SearchPolicy() = default;
  // Index into ctx.candidates.decisions; must be unmasked.
  virtual std::size_t choose(const DecisionContext& ctx, Rng& rng) const = 0;
  // Throws SchemaMismatch when the policy cannot read this world's features.
  virtual void check_compatible(const World&) const {}
};

class LearnedPolicy : public SearchPolicy {
 public:
  explicit LearnedPolicy(PolicyParams params, double temperature = 1.0);
  std::size_t choose(const DecisionContext& ctx, Rng& rng) const override;
  void check_compatible(const World& world) const override;
  const PolicyParams& params() const { return params_; }

 private:
  PolicyParams params_;
  double temperature_;
};

// Ground-truth next step: the first unsatisfied sub-goal whose dependency is
// met; answer once all are satisfied; give up after an error or an empty
// result, or when the needed call is not on offer.
class OraclePolicy : public SearchPolicy {
 public:
  std::size_t choose(const DecisionContext& ctx, Rng& rng) const override;
};

// Oracle that, with probability `noise`, slips where it would have made a call:
// some other decision (wrong call, early answer, early give-up) drawn with
// weight exp(2 * plausibility). Errors make it give up at once; an empty
// result is only noticed when it is about to answer.
class NoisyExpertPolicy : public SearchPolicy {
 public:
  explicit NoisyExpertPolicy(double noise);
  std::size_t choose(const DecisionContext& ctx, Rng& rng) const override;
  static double plausibility(const FeatureVector& phi);

 private:
  double noise_;
};

// Uniform over unmasked candidates; used for fuzzing.
class RandomPolicy : public SearchPolicy {
 public:
  std::size_t choose(const DecisionContext& ctx, Rng& rng) const override;
};

// Calls on offer plus both Finish decisions, in that order.
std::vector<Decision> candidate_decisions(const World& world, const Task& task, const std::vector<HistoryStep>& history);

RolloutResult run_dfsdt(const SearchPolicy& policy, const World& world, const Task& task, const SearchBudget& budget,
                        std::uint64_t seed, const TreeOptions& options = {});
// Throws UnknownTask.
RolloutResult run_dfsdt(const SearchPolicy& policy, const World& world, const std::string& task_id,
                        const SearchBudget& budget, std::uint64_t seed, const TreeOptions& options = {});

DecisionTree annotate_expert_tree(const World& world, const Task& task, double expert_noise, std::uint64_t seed,
                                  const SearchBudget& budget = {});

// One rollout per task with seed derived from (seed, task id); `jobs` worker threads.
std::vector<RolloutResult> batch_rollout(const SearchPolicy& policy, const World& world,
                                         const std::vector<const Task*>& tasks, const SearchBudget& budget,
                                         std::uint64_t seed, int jobs = 1);
std::uint64_t rollout_seed(std::uint64_t seed, const std::string& task_id);

// Re-executes every call node against the world; true iff all responses match.
bool replay_matches(const World& world, const Task& task, const DecisionTree& tree);

Json rollout_to_json(const RolloutResult& r);
RolloutResult rollout_from_json(const Json& j, const TreeOptions& options = {});
void write_rollouts(const std::string& path, const std::vector<RolloutResult>& results, const Json& meta = nullptr);
std::vector<RolloutResult> read_rollouts(const std::string& path, const TreeOptions& options = {});

}  // namespace toolpref
