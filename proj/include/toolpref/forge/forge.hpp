#pragma once

// Preference and SFT datasets from decision trees.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "toolpref/json.hpp"
#include "toolpref/trajectory/tree.hpp"
#include "toolpref/world/world.hpp"

namespace toolpref {

enum class Granularity { StepWise, PathWise };
const char* to_string(Granularity g);
Granularity granularity_from_string(const std::string& s);  // "step" | "path"

// One decision of a payload together with what the environment returned.
struct PairStep {
  NodeId node = 0;
  Decision decision;
  std::optional<ApiResponse> response;

  friend bool operator==(const PairStep&, const PairStep&) = default;
};

struct PreferencePair {
  std::string instruction;
  // Shared prefix: (action, response) pairs on root -> branch_node.
  std::vector<HistoryStep> context_history;
  NodeId branch_node = 0;
  // Full root -> node id lists; payloads are what follows branch_node.
  std::vector<NodeId> preferred_path;
  std::vector<NodeId> dispreferred_path;
  std::vector<PairStep> preferred;
  std::vector<PairStep> dispreferred;
  Granularity granularity = Granularity::StepWise;
  std::string source_tree;

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

// Step-wise: at every success-path node with >= 2 children, the on-path child
// is preferred over each sibling whose subtree holds no successful answer.
// Sorted by (branch node id, preferred child order, dispreferred child order).
std::vector<PreferencePair> extract_stepwise(const DecisionTree& tree);
// Path-wise: success paths x failure paths, success-major DFS order.
std::vector<PreferencePair> extract_pathwise(const DecisionTree& tree);
std::vector<PreferencePair> extract_pairs(const DecisionTree& tree, Granularity g);

// Tool name -> documentation text.
using ApiDocs = std::map<std::string, std::string>;
ApiDocs api_docs_from_world(const World& world);

struct FormattedSample {
  std::string instruction_block;
  std::string input_block;
  std::string output_preferred;
  std::string output_dispreferred;

  std::string bytes() const;  // dedup key
  friend bool operator==(const FormattedSample&, const FormattedSample&) = default;
};

// Throws MissingDoc when a referenced tool has no documentation.
FormattedSample format_sample(const PreferencePair& pair, const ApiDocs& docs);

struct TreeStats {
  std::string tree_id;
  bool kept = false;
  std::size_t extracted = 0;
  std::size_t emitted = 0;  // after dedup
};

struct PreferenceRecord {
  PreferencePair pair;
  FormattedSample sample;
};

struct CorpusStats {
  std::size_t trees_in = 0;
  std::size_t trees_kept = 0;
  std::size_t pairs_extracted = 0;
  std::size_t duplicates_dropped = 0;
  std::size_t pairs_emitted = 0;
  std::vector<TreeStats> per_tree;
};

struct PreferenceCorpus {
  std::vector<PreferenceRecord> records;
  CorpusStats stats;
};

// Filter (has_failed_branch) -> scrub diversity prompts -> extract -> format
// -> drop byte-identical samples. Fold is in tree order.
PreferenceCorpus build_corpus(const std::vector<DecisionTree>& trees, Granularity g, const ApiDocs& docs);

struct SftExample {
  std::string instruction;
  ReasoningState state;
  Decision target;
  std::string source_tree;
  NodeId node = 0;

  friend bool operator==(const SftExample&, const SftExample&) = default;
};

// Trees that survive the failed-branch filter, scrubbed.
std::vector<DecisionTree> qualifying_trees(const std::vector<DecisionTree>& trees);

// Samples n whole trees without replacement and expands every success path
// into one example per decision (the final answer included). Throws InsufficientData.
std::vector<SftExample> resample_sft_set(const std::vector<DecisionTree>& trees, std::size_t n_instructions,
                                         std::uint64_t seed);
std::vector<SftExample> sft_examples(const DecisionTree& tree);

// Instruction-level pair sampling: whole source trees in seeded order until
// at least n_pairs are taken (or the corpus runs out).
std::vector<PreferenceRecord> sample_pairs_by_instruction(const std::vector<PreferenceRecord>& records,
                                                          std::size_t n_pairs, std::uint64_t seed);

// Desk-scale equivalents of the reference corpus sizes.
inline constexpr double kSftInstructionFraction = 11142.0 / 42192.0;
inline constexpr double kDpoPairFraction = 8202.0 / 69393.0;

// Dataset files.
Json preference_record_to_json(const PreferenceRecord& r);
Json sft_example_to_json(const SftExample& e, const ApiDocs& docs);
Json corpus_stats_to_json(const CorpusStats& s);

}  // namespace toolpref
