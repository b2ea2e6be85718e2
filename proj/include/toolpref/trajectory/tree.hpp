#pragma once

// Decision-tree trajectories: the tree an agent (or an expert annotator)
// grows while searching depth-first over tool calls.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace toolpref {

using NodeId = std::uint32_t;

struct ApiAction {
  std::string tool_name;
  // Ordered as written by the caller; names are unique.
  std::vector<std::pair<std::string, std::string>> arguments;

  const std::string* argument(const std::string& name) const;
  std::string to_string() const;  // tool(name="value", ...)

  friend bool operator==(const ApiAction&, const ApiAction&) = default;
};

enum class ResponseStatus { Ok, Error };

struct ApiResponse {
  ResponseStatus status = ResponseStatus::Ok;
  std::string payload;

  bool ok() const { return status == ResponseStatus::Ok; }
  friend bool operator==(const ApiResponse&, const ApiResponse&) = default;
};

// Root is the query node; it carries no action.
enum class NodeKind { Root, Call, FinishAnswer, FinishGiveUp };

const char* to_string(NodeKind kind);
NodeKind node_kind_from_string(const std::string& text);  // throws SchemaError

inline constexpr const char* kFinishTool = "Finish";

// One choice available to the agent at a node. Finish decisions map onto
// the "Finish" pseudo-tool with a return_type argument.
struct Decision {
  NodeKind kind = NodeKind::Call;
  ApiAction action;

  static Decision call(ApiAction action);
  static Decision answer();
  static Decision give_up();

  bool is_call() const { return kind == NodeKind::Call; }
  bool is_finish() const { return kind == NodeKind::FinishAnswer || kind == NodeKind::FinishGiveUp; }
  std::string to_string() const;

  friend bool operator==(const Decision&, const Decision&) = default;
};

struct TreeNode {
  NodeId id = 0;
  std::optional<NodeId> parent;
  NodeKind kind = NodeKind::Root;
  std::optional<ApiAction> action;
  std::optional<ApiResponse> response;
  std::vector<NodeId> children;  // exploration order
  std::optional<std::string> final_answer;
  // Sibling-disclosure text the expansion prompt carried ("previously tried: ...").
  std::optional<std::string> diversity_note;
  // Decisions that were on offer at this node (unmasked); empty when not recorded.
  std::vector<Decision> candidates;

  bool is_leaf() const { return children.empty(); }
  // The decision that created this node. Root has none.
  std::optional<Decision> decision() const;

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct TreeOptions {
  // Final answers containing any of these (case-insensitive) do not count
  // as successful leaves.
  std::vector<std::string> meaningless_keywords{"sorry", "apologize"};
};

// Validated, immutable decision tree. Construct through DecisionTree::build.
class DecisionTree {
 public:
  // Nodes are given in document order; children lists are derived from the
  // parent ids and keep that order. Any incoming children lists are ignored.
  static DecisionTree build(std::string instruction, std::vector<TreeNode> nodes, TreeOptions options = {},
                            std::string tree_id = {}, std::string task_id = {});

  const std::string& instruction() const { return instruction_; }
  const std::string& tree_id() const { return tree_id_; }
  const std::string& task_id() const { return task_id_; }
  NodeId root_id() const { return root_id_; }
  const TreeOptions& options() const { return options_; }

  bool contains(NodeId id) const { return nodes_.count(id) != 0; }
  const TreeNode& node(NodeId id) const;  // throws UnknownNode
  std::size_t size() const { return order_.size(); }
  // Node ids in document order.
  const std::vector<NodeId>& document_order() const { return order_; }

  // FinishAnswer leaf whose answer passes the keyword filter.
  bool is_success_leaf(NodeId id) const;
  bool subtree_has_success(NodeId id) const;

  // Same tree with node content rewritten by `fn`. Ids and parents must be kept.
  DecisionTree transformed(std::string instruction, const std::function<TreeNode(const TreeNode&)>& fn) const;

  friend bool operator==(const DecisionTree& a, const DecisionTree& b) {
    return a.instruction_ == b.instruction_ && a.tree_id_ == b.tree_id_ && a.task_id_ == b.task_id_ &&
           a.root_id_ == b.root_id_ && a.order_ == b.order_ && a.nodes_ == b.nodes_;
  }

 private:
  DecisionTree() = default;

  std::string instruction_;
  std::string tree_id_;
  std::string task_id_;
  NodeId root_id_ = 0;
  TreeOptions options_;
  std::map<NodeId, TreeNode> nodes_;
  std::vector<NodeId> order_;
};

bool contains_keyword(const std::string& text, const std::vector<std::string>& keywords);

enum class PathOutcome { Success, Failure };

struct Path {
  std::vector<NodeId> node_ids;  // root first
  PathOutcome outcome = PathOutcome::Failure;

  friend bool operator==(const Path&, const Path&) = default;
};

// Every root-to-leaf path with at least one edge, in depth-first exploration order.
std::vector<Path> all_paths(const DecisionTree& tree);
std::vector<Path> success_paths(const DecisionTree& tree);
std::vector<Path> failure_paths(const DecisionTree& tree);

// Some node on a success path has a child whose whole subtree failed.
bool has_failed_branch(const DecisionTree& tree);

// Removes diversity notes and any [[diversity]]...[[/diversity]] segments from node text.
DecisionTree scrub_diversity_prompts(const DecisionTree& tree);
std::string strip_diversity_segments(const std::string& text);

inline constexpr const char* kDiversityOpen = "[[diversity]]";
inline constexpr const char* kDiversityClose = "[[/diversity]]";

struct HistoryStep {
  ApiAction action;
  ApiResponse response;

  friend bool operator==(const HistoryStep&, const HistoryStep&) = default;
};

// What the agent sees when deciding: the instruction plus every earlier
// (action, response) pair in decision order.
struct ReasoningState {
  std::string instruction;
  std::vector<HistoryStep> history;

  friend bool operator==(const ReasoningState&, const ReasoningState&) = default;
};

// State in which the decision creating `node_id` was made: the (action,
// response) pairs on root -> node_id, excluding node_id itself.
ReasoningState state_at(const DecisionTree& tree, NodeId node_id);

// Ids from root to node_id inclusive.
std::vector<NodeId> path_to(const DecisionTree& tree, NodeId node_id);

}  // namespace toolpref
