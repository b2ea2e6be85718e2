#include "toolpref/trajectory/tree.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "toolpref/errors.hpp"

namespace toolpref {

const std::string* ApiAction::argument(const std::string& name) const {
  for (const auto& [k, v] : arguments) {
    if (k == name) return &v;
  }
  return nullptr;
}

std::string ApiAction::to_string() const {
  std::ostringstream out;
  out << tool_name << '(';
  for (std::size_t i = 0; i < arguments.size(); ++i) {
    if (i) out << ", ";
    out << arguments[i].first << "=\"" << arguments[i].second << '"';
  }
  out << ')';
  return out.str();
}

const char* to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Root: return "root";
    case NodeKind::Call: return "call";
    case NodeKind::FinishAnswer: return "finish_answer";
    case NodeKind::FinishGiveUp: return "finish_give_up";
  }
  return "?";
}

NodeKind node_kind_from_string(const std::string& text) {
  if (text == "root") return NodeKind::Root;
  if (text == "call") return NodeKind::Call;
  if (text == "finish_answer") return NodeKind::FinishAnswer;
  if (text == "finish_give_up") return NodeKind::FinishGiveUp;
  throw SchemaError("unknown node kind '" + text + "'");
}

Decision Decision::call(ApiAction action) { return Decision{NodeKind::Call, std::move(action)}; }

Decision Decision::answer() {
  return Decision{NodeKind::FinishAnswer, ApiAction{kFinishTool, {{"return_type", "give_answer"}}}};
}

Decision Decision::give_up() {
  return Decision{NodeKind::FinishGiveUp, ApiAction{kFinishTool, {{"return_type", "give_up_and_restart"}}}};
}

std::string Decision::to_string() const { return action.to_string(); }

std::optional<Decision> TreeNode::decision() const {
  switch (kind) {
    case NodeKind::Root: return std::nullopt;
    case NodeKind::Call: return Decision::call(action.value_or(ApiAction{}));
    case NodeKind::FinishAnswer: return Decision::answer();
    case NodeKind::FinishGiveUp: return Decision::give_up();
  }
  return std::nullopt;
}

namespace {

void validate_node_fields(const TreeNode& n) {
  const std::string where = "node " + std::to_string(n.id) + ": ";
  if (n.kind == NodeKind::Root) {
    if (n.action || n.response) throw SchemaError(where + "root carries no action or response");
    return;
  }
  if (!n.action) throw SchemaError(where + "missing action");
  if (n.action->tool_name.empty()) throw SchemaError(where + "empty tool name");
  std::set<std::string> names;
  for (const auto& [k, v] : n.action->arguments) {
    if (!names.insert(k).second) throw SchemaError(where + "duplicate argument '" + k + "'");
  }
  if (n.kind == NodeKind::Call && !n.response) throw SchemaError(where + "call node without response");
  if (n.kind == NodeKind::FinishGiveUp && n.response) throw SchemaError(where + "give-up node carries a response");
  if (n.response && n.response->status == ResponseStatus::Error && n.response->payload.empty()) {
    throw SchemaError(where + "error response with empty payload");
  }
  if (n.final_answer && n.kind != NodeKind::FinishAnswer) {
    throw SchemaError(where + "final_answer on a non-answer node");
  }
}

}  // namespace

DecisionTree DecisionTree::build(std::string instruction, std::vector<TreeNode> nodes, TreeOptions options,
                                 std::string tree_id, std::string task_id) {
  DecisionTree t;
  t.instruction_ = std::move(instruction);
  t.tree_id_ = std::move(tree_id);
  t.task_id_ = std::move(task_id);
  t.options_ = std::move(options);

  std::optional<NodeId> root;
  for (auto& n : nodes) {
    n.children.clear();
    if (n.kind == NodeKind::FinishAnswer) n.action = Decision::answer().action;
    if (n.kind == NodeKind::FinishGiveUp) n.action = Decision::give_up().action;
    validate_node_fields(n);
    if (!n.parent) {
      if (root) throw StructureError(StructureFault::MultipleRoots, "more than one root node");
      if (n.kind != NodeKind::Root) throw StructureError(StructureFault::BadRoot, "parentless node is not a root");
      root = n.id;
    } else if (n.kind == NodeKind::Root) {
      throw StructureError(StructureFault::BadRoot, "root-kind node " + std::to_string(n.id) + " has a parent");
    }
    t.order_.push_back(n.id);
    if (!t.nodes_.emplace(n.id, n).second) {
      throw StructureError(StructureFault::DuplicateId, "duplicate node id " + std::to_string(n.id));
    }
  }
  for (NodeId id : t.order_) {
    const TreeNode& n = t.nodes_.at(id);
    if (n.parent && *n.parent == n.id) {
      throw StructureError(StructureFault::Cycle, "node " + std::to_string(id) + " is its own parent");
    }
  }
  if (!root) throw StructureError(StructureFault::NoRoot, "tree has no root node");
  t.root_id_ = *root;

  for (NodeId id : t.order_) {
    const TreeNode& n = t.nodes_.at(id);
    if (!n.parent) continue;
    auto it = t.nodes_.find(*n.parent);
    if (it == t.nodes_.end()) {
      throw StructureError(StructureFault::Orphan,
                           "node " + std::to_string(id) + " references missing parent " + std::to_string(*n.parent));
    }
    it->second.children.push_back(id);
  }

  // Reachability from the root; anything left over sits on a parent cycle.
  std::set<NodeId> seen;
  std::vector<NodeId> stack{t.root_id_};
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    seen.insert(id);
    for (NodeId c : t.nodes_.at(id).children) stack.push_back(c);
  }
  if (seen.size() != t.nodes_.size()) {
    throw StructureError(StructureFault::Cycle, "nodes unreachable from root (parent cycle)");
  }

  for (const auto& [id, n] : t.nodes_) {
    if ((n.kind == NodeKind::FinishAnswer || n.kind == NodeKind::FinishGiveUp) && !n.children.empty()) {
      throw StructureError(StructureFault::NonLeafFinish, "finish node " + std::to_string(id) + " has children");
    }
  }
  return t;
}

const TreeNode& DecisionTree::node(NodeId id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw UnknownNode("unknown node id " + std::to_string(id));
  return it->second;
}

bool contains_keyword(const std::string& text, const std::vector<std::string>& keywords) {
  auto lower = [](std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
  };
  const std::string hay = lower(text);
  for (const auto& k : keywords) {
    if (!k.empty() && hay.find(lower(k)) != std::string::npos) return true;
  }
  return false;
}

bool DecisionTree::is_success_leaf(NodeId id) const {
  const TreeNode& n = node(id);
  if (n.kind != NodeKind::FinishAnswer || !n.final_answer || n.final_answer->empty()) return false;
  return !contains_keyword(*n.final_answer, options_.meaningless_keywords);
}

bool DecisionTree::subtree_has_success(NodeId id) const {
  std::vector<NodeId> stack{id};
  while (!stack.empty()) {
    NodeId cur = stack.back();
    stack.pop_back();
    if (is_success_leaf(cur)) return true;
    for (NodeId c : node(cur).children) stack.push_back(c);
  }
  return false;
}

DecisionTree DecisionTree::transformed(std::string instruction,
                                       const std::function<TreeNode(const TreeNode&)>& fn) const {
  std::vector<TreeNode> out;
  out.reserve(order_.size());
  for (NodeId id : order_) {
    TreeNode n = fn(nodes_.at(id));
    if (n.id != id || n.parent != nodes_.at(id).parent) throw Error("transform changed tree structure");
    out.push_back(std::move(n));
  }
  return build(std::move(instruction), std::move(out), options_, tree_id_, task_id_);
}

std::vector<Path> all_paths(const DecisionTree& tree) {
  std::vector<Path> paths;
  std::vector<NodeId> prefix;
  // Recursive DFS in child order; trees here are shallow.
  std::function<void(NodeId)> walk = [&](NodeId id) {
    prefix.push_back(id);
    const TreeNode& n = tree.node(id);
    if (n.children.empty()) {
      if (prefix.size() > 1) {
        paths.push_back(Path{prefix, tree.is_success_leaf(id) ? PathOutcome::Success : PathOutcome::Failure});
      }
    } else {
      for (NodeId c : n.children) walk(c);
    }
    prefix.pop_back();
  };
  walk(tree.root_id());
  return paths;
}

std::vector<Path> success_paths(const DecisionTree& tree) {
  std::vector<Path> out;
  for (auto& p : all_paths(tree)) {
    if (p.outcome == PathOutcome::Success) out.push_back(std::move(p));
  }
  return out;
}

std::vector<Path> failure_paths(const DecisionTree& tree) {
  std::vector<Path> out;
  for (auto& p : all_paths(tree)) {
    if (p.outcome == PathOutcome::Failure) out.push_back(std::move(p));
  }
  return out;
}

bool has_failed_branch(const DecisionTree& tree) {
  for (const Path& p : success_paths(tree)) {
    for (std::size_t i = 0; i + 1 < p.node_ids.size(); ++i) {
      const TreeNode& n = tree.node(p.node_ids[i]);
      for (NodeId c : n.children) {
        if (c != p.node_ids[i + 1] && !tree.subtree_has_success(c)) return true;
      }
    }
  }
  return false;
}

std::string strip_diversity_segments(const std::string& text) {
  const std::string open = kDiversityOpen;
  const std::string close = kDiversityClose;
  std::string out;
  std::size_t pos = 0;
  while (true) {
    std::size_t start = text.find(open, pos);
    if (start == std::string::npos) break;
    std::size_t end = text.find(close, start + open.size());
    out.append(text, pos, start - pos);
    if (end == std::string::npos) {
      // Unterminated marker: drop to end of text.
      pos = text.size();
      break;
    }
    pos = end + close.size();
  }
  out.append(text, pos, std::string::npos);
  return out;
}

DecisionTree scrub_diversity_prompts(const DecisionTree& tree) {
  return tree.transformed(strip_diversity_segments(tree.instruction()), [](const TreeNode& in) {
    TreeNode n = in;
    n.diversity_note.reset();
    if (n.action) {
      for (auto& [k, v] : n.action->arguments) v = strip_diversity_segments(v);
    }
    if (n.response) n.response->payload = strip_diversity_segments(n.response->payload);
    if (n.final_answer) n.final_answer = strip_diversity_segments(*n.final_answer);
    return n;
  });
}

std::vector<NodeId> path_to(const DecisionTree& tree, NodeId node_id) {
  std::vector<NodeId> ids;
  std::optional<NodeId> cur = node_id;
  while (cur) {
    ids.push_back(*cur);
    cur = tree.node(*cur).parent;
  }
  std::reverse(ids.begin(), ids.end());
  return ids;
}

ReasoningState state_at(const DecisionTree& tree, NodeId node_id) {
  ReasoningState s{tree.instruction(), {}};
  const auto ids = path_to(tree, node_id);
  for (std::size_t i = 1; i + 1 < ids.size(); ++i) {
    const TreeNode& n = tree.node(ids[i]);
    s.history.push_back(HistoryStep{n.action.value_or(ApiAction{}), n.response.value_or(ApiResponse{})});
  }
  return s;
}

}  // namespace toolpref
