#include "toolpref/trajectory/tree_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "toolpref/errors.hpp"

namespace toolpref {

namespace {

const Json& require(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(where + ": missing field '" + key + "'");
  return j.at(key);
}

std::string require_string(const Json& j, const char* key, const std::string& where) {
  const Json& v = require(j, key, where);
  if (!v.is_string()) throw SchemaError(where + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

std::optional<std::string> optional_string(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_string()) throw SchemaError(where + ": field '" + key + "' must be a string");
  return j.at(key).get<std::string>();
}

ResponseStatus status_from_string(const std::string& s, const std::string& where) {
  if (s == "ok") return ResponseStatus::Ok;
  if (s == "error") return ResponseStatus::Error;
  throw SchemaError(where + ": response_status must be 'ok' or 'error'");
}

std::vector<std::pair<std::string, std::string>> args_from_json(const Json& j, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + ": args must be an object");
  std::vector<std::pair<std::string, std::string>> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) throw SchemaError(where + ": argument '" + it.key() + "' must be a string");
    out.emplace_back(it.key(), it.value().get<std::string>());
  }
  return out;
}

TreeNode node_from_json(const Json& j, std::size_t index) {
  std::string where = "nodes[" + std::to_string(index) + "]";
  if (!j.is_object()) throw SchemaError(where + ": node must be an object");
  TreeNode n;
  const Json& id = require(j, "id", where);
  if (!id.is_number_unsigned() && !(id.is_number_integer() && id.get<long long>() >= 0)) {
    throw SchemaError(where + ": id must be a non-negative integer");
  }
  n.id = id.get<NodeId>();
  where = "node " + std::to_string(n.id);
  const Json& parent = require(j, "parent", where);
  if (!parent.is_null()) {
    if (!parent.is_number_integer() || parent.get<long long>() < 0) {
      throw SchemaError(where + ": parent must be null or a non-negative integer");
    }
    n.parent = parent.get<NodeId>();
  }
  n.kind = node_kind_from_string(require_string(j, "kind", where));

  if (n.kind != NodeKind::Root) {
    if (n.kind == NodeKind::Call) {
      ApiAction a;
      a.tool_name = require_string(j, "tool", where);
      a.arguments = j.contains("args") ? args_from_json(j.at("args"), where) : decltype(a.arguments){};
      n.action = std::move(a);
    } else {
      // Finish nodes: tool/args are implied by the kind.
      n.action = (n.kind == NodeKind::FinishAnswer ? Decision::answer() : Decision::give_up()).action;
    }
  }
  if (auto status = optional_string(j, "response_status", where)) {
    n.response = ApiResponse{status_from_string(*status, where), optional_string(j, "response_payload", where).value_or("")};
  }
  n.final_answer = optional_string(j, "final_answer", where);
  n.diversity_note = optional_string(j, "diversity_note", where);
  if (j.contains("candidates")) {
    const Json& c = j.at("candidates");
    if (!c.is_array()) throw SchemaError(where + ": candidates must be an array");
    for (const Json& d : c) n.candidates.push_back(decision_from_json(d));
  }
  return n;
}

}  // namespace

Json action_to_json(const ApiAction& action) {
  Json j;
  j["tool"] = action.tool_name;
  Json args = Json::object();
  for (const auto& [k, v] : action.arguments) args[k] = v;
  j["args"] = std::move(args);
  return j;
}

ApiAction action_from_json(const Json& j) {
  ApiAction a;
  a.tool_name = require_string(j, "tool", "action");
  if (j.contains("args")) a.arguments = args_from_json(j.at("args"), "action");
  return a;
}

Json decision_to_json(const Decision& d) {
  if (d.kind == NodeKind::Call) {
    Json j;
    j["kind"] = "call";
    Json a = action_to_json(d.action);
    j["tool"] = a["tool"];
    j["args"] = a["args"];
    return j;
  }
  return Json{{"kind", to_string(d.kind)}};
}

Decision decision_from_json(const Json& j) {
  const NodeKind kind = node_kind_from_string(require_string(j, "kind", "decision"));
  switch (kind) {
    case NodeKind::Call: return Decision::call(action_from_json(j));
    case NodeKind::FinishAnswer: return Decision::answer();
    case NodeKind::FinishGiveUp: return Decision::give_up();
    case NodeKind::Root: break;
  }
  throw SchemaError("decision: kind 'root' is not a decision");
}

Json tree_to_json(const DecisionTree& tree) {
  Json j;
  if (!tree.tree_id().empty()) j["tree_id"] = tree.tree_id();
  if (!tree.task_id().empty()) j["task_id"] = tree.task_id();
  j["instruction"] = tree.instruction();
  Json nodes = Json::array();
  for (NodeId id : tree.document_order()) {
    const TreeNode& n = tree.node(id);
    Json o;
    o["id"] = n.id;
    o["parent"] = n.parent ? Json(*n.parent) : Json(nullptr);
    o["kind"] = to_string(n.kind);
    if (n.kind == NodeKind::Call && n.action) {
      Json a = action_to_json(*n.action);
      o["tool"] = a["tool"];
      o["args"] = a["args"];
    }
    if (n.response) {
      o["response_status"] = n.response->ok() ? "ok" : "error";
      o["response_payload"] = n.response->payload;
    }
    if (n.final_answer) o["final_answer"] = *n.final_answer;
    if (n.diversity_note) o["diversity_note"] = *n.diversity_note;
    if (!n.candidates.empty()) {
      Json c = Json::array();
      for (const auto& d : n.candidates) c.push_back(decision_to_json(d));
      o["candidates"] = std::move(c);
    }
    nodes.push_back(std::move(o));
  }
  j["nodes"] = std::move(nodes);
  return j;
}

DecisionTree tree_from_json(const Json& j, const TreeOptions& options) {
  if (!j.is_object()) throw SchemaError("tree document must be an object");
  std::string instruction = require_string(j, "instruction", "tree");
  const Json& nodes_json = require(j, "nodes", "tree");
  if (!nodes_json.is_array()) throw SchemaError("tree: nodes must be an array");
  std::vector<TreeNode> nodes;
  nodes.reserve(nodes_json.size());
  for (std::size_t i = 0; i < nodes_json.size(); ++i) nodes.push_back(node_from_json(nodes_json[i], i));
  return DecisionTree::build(std::move(instruction), std::move(nodes), options,
                             optional_string(j, "tree_id", "tree").value_or(""),
                             optional_string(j, "task_id", "tree").value_or(""));
}

DecisionTree parse_tree(const std::string& document, const TreeOptions& options) {
  Json j;
  try {
    j = Json::parse(document);
  } catch (const Json::parse_error& e) {
    throw SchemaError(std::string("malformed tree document: ") + e.what());
  }
  return tree_from_json(j, options);
}

std::string serialize_tree(const DecisionTree& tree) { return tree_to_json(tree).dump(); }

std::vector<DecisionTree> read_tree_corpus(std::istream& in, const TreeOptions& options) {
  std::vector<DecisionTree> trees;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (j.is_object() && j.contains("_meta")) continue;
    try {
      trees.push_back(tree_from_json(j, options));
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return trees;
}

std::vector<DecisionTree> read_tree_corpus_file(const std::string& path, const TreeOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open tree corpus '" + path + "'");
  return read_tree_corpus(in, options);
}

void write_tree_corpus(std::ostream& out, const std::vector<DecisionTree>& trees, const Json& meta) {
  if (!meta.is_null()) out << Json{{"_meta", meta}}.dump() << '\n';
  for (const auto& t : trees) out << serialize_tree(t) << '\n';
}

}  // namespace toolpref
