#pragma once

// Run configuration and the pipeline stages the command-line tool strings
// together: world -> expert trees -> datasets -> SFT/DPO -> rollouts -> metrics.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "toolpref/dfsdt/engine.hpp"
#include "toolpref/eval/metrics.hpp"
#include "toolpref/forge/forge.hpp"
#include "toolpref/json.hpp"
#include "toolpref/trainer/trainer.hpp"
#include "toolpref/world/world.hpp"

namespace toolpref {

// Empty entries resolve to <dir>/<default file name>.
struct RunPaths {
  std::string dir = "run";
  std::string world;
  std::string trees;
  std::string pairs;
  std::string sft;
  std::string forge_stats;
  std::string sft_checkpoint;
  std::string dpo_checkpoint;
  std::string sft_log;
  std::string dpo_log;
  std::string rollouts;  // directory
  std::string reports;   // directory

  RunPaths resolved() const;
};

// Learning rates and epochs sized for the log-linear policy and desk-scale
// corpora; the TrainConfig defaults are the reference LLM settings.
TrainConfig desk_scale_train_config();

struct RunConfig {
  RunPaths paths;
  WorldConfig world;
  TrainConfig train = desk_scale_train_config();
  SearchBudget budget;
  Granularity granularity = Granularity::StepWise;
  double expert_noise = 0.3;
  std::uint64_t seed = 1;  // annotation, dataset sampling, rollouts
  std::vector<std::uint64_t> eval_seeds{1, 2, 3, 4, 5};
  double sft_fraction = kSftInstructionFraction;
  double pair_fraction = kDpoPairFraction;
  int jobs = 1;

  void validate() const;  // throws ConfigError
};

Json run_config_to_json(const RunConfig& c);
// Missing keys keep their defaults; unknown keys throw ConfigError.
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::string& path);

// "a.b.c=value"; value is parsed as JSON when it parses, else taken as a string.
void apply_override(Json& config, const std::string& assignment);

// Hex digest of the canonical config document.
std::string config_hash(const RunConfig& c);
// Header embedded in every artifact.
Json artifact_meta(const RunConfig& c, const std::string& command);

std::vector<DecisionTree> annotate_training_trees(const World& world, double expert_noise, std::uint64_t seed,
                                                  const SearchBudget& budget = {});

// Pointers back into the tree corpus; training re-reads features from the trees.
struct SftRef {
  std::string source_tree;
  NodeId node = 0;
};

struct PairRef {
  std::string source_tree;
  NodeId branch_node = 0;
  std::vector<NodeId> preferred_path;
  std::vector<NodeId> dispreferred_path;
};

struct Datasets {
  std::vector<SftExample> sft;
  std::vector<PreferenceRecord> pairs;  // after instruction-level sampling
  CorpusStats stats;
  std::size_t trees_qualifying = 0;
};

// Fractions are of qualifying trees (SFT) and of emitted pairs (DPO), rounded.
Datasets forge_datasets(const std::vector<DecisionTree>& trees, Granularity g, const ApiDocs& docs,
                        std::uint64_t seed, double sft_fraction, double pair_fraction);

SftRef sft_ref(const SftExample& e);
PairRef pair_ref(const PreferenceRecord& r);
SftRef sft_ref_from_json(const Json& j);
PairRef pair_ref_from_json(const Json& j);

// `trees` are looked up by tree id; throws SchemaError for unknown trees or
// paths that do not run through branch_node.
SftBatch bind_sft_refs(const World& world, const std::vector<DecisionTree>& trees, const std::vector<SftRef>& refs);
DpoBatch bind_pair_refs(const World& world, const std::vector<DecisionTree>& trees, const std::vector<PairRef>& refs);

// Every scenario task, scenario order then task order.
std::vector<const Task*> evaluation_tasks(const World& world);

struct PolicyEval {
  std::vector<RolloutResult> results;
  MetricsReport report;
};

PolicyEval evaluate_policy(const std::string& label, const World& world, const PolicyParams& params,
                           const SearchBudget& budget, std::uint64_t seed, int jobs = 1,
                           const std::vector<RolloutResult>* baseline = nullptr, const EvalOptions& options = {});

// One full pipeline on a freshly generated world: SFT, then DPO on pairs of
// each requested granularity, each evaluated on the test scenarios.
struct SeedOutcome {
  std::uint64_t seed = 0;
  std::size_t sft_examples = 0;
  PolicyEval sft;
  std::vector<std::pair<Granularity, std::size_t>> pair_counts;
  std::vector<std::pair<Granularity, PolicyEval>> dpo;
};

SeedOutcome run_seed(const RunConfig& config, std::uint64_t seed, const std::vector<Granularity>& granularities);

}  // namespace toolpref
