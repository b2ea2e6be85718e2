#pragma once

// Line-delimited JSON corpus of decision trees. The schema is documented in
// docs/tree_schema.md; tests/data/golden_tree.jsonl is the golden example.

#include <iosfwd>
#include <string>
#include <vector>

#include "toolpref/json.hpp"
#include "toolpref/trajectory/tree.hpp"

namespace toolpref {

Json action_to_json(const ApiAction& action);
ApiAction action_from_json(const Json& j);
Json decision_to_json(const Decision& d);
Decision decision_from_json(const Json& j);

Json tree_to_json(const DecisionTree& tree);
DecisionTree tree_from_json(const Json& j, const TreeOptions& options = {});

// One document (one line) -> tree. Throws SchemaError / StructureError.
DecisionTree parse_tree(const std::string& document, const TreeOptions& options = {});
std::string serialize_tree(const DecisionTree& tree);

// Reads every tree line, skipping blank lines and "_meta" header records.
std::vector<DecisionTree> read_tree_corpus(std::istream& in, const TreeOptions& options = {});
std::vector<DecisionTree> read_tree_corpus_file(const std::string& path, const TreeOptions& options = {});
void write_tree_corpus(std::ostream& out, const std::vector<DecisionTree>& trees, const Json& meta = Json());

}  // namespace toolpref
