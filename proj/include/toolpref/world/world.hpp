#pragma once

// Seeded synthetic tool ecosystem: a catalog of tools grouped by category,
// tasks with ground-truth sub-goals, and a deterministic executor.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "toolpref/json.hpp"
#include "toolpref/trajectory/tree.hpp"

namespace toolpref {

enum class ParamType { Code, Text, Number };

const char* to_string(ParamType t);
ParamType param_type_from_string(const std::string& s);
// Classifies a literal the way the executor's schema check does.
ParamType infer_value_type(const std::string& value);

struct ParamSpec {
  std::string name;
  ParamType type = ParamType::Text;
};

struct ToolSpec {
  std::string name;
  std::string category;
  std::string provider;
  std::string verb;
  std::string noun;
  std::string description;
  std::vector<ParamSpec> required;
  std::vector<ParamSpec> optional;
  bool accessible = true;
  bool held_out = false;  // never offered to training tasks
};

enum class TaskGroup { G1, G2, G3 };
enum class Scenario { G1_Ins, G1_Tool, G1_Cat, G2_Ins, G2_Cat, G3_Ins };

inline constexpr Scenario kAllScenarios[] = {Scenario::G1_Ins, Scenario::G1_Tool, Scenario::G1_Cat,
                                             Scenario::G2_Ins, Scenario::G2_Cat,  Scenario::G3_Ins};

const char* to_string(TaskGroup g);
const char* to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct SubGoal {
  std::string tool;
  std::string param;
  std::string value;
  // Index of the sub-goal whose successful response reveals `value`.
  std::optional<std::size_t> depends_on;
};

struct Task {
  std::string id;
  std::string query;
  TaskGroup group = TaskGroup::G1;
  std::optional<Scenario> scenario;  // empty for training tasks
  std::vector<std::string> categories;
  std::vector<SubGoal> required_calls;
  std::vector<std::string> scope;  // tools offered to the agent, catalog order
  bool solvable = true;

  bool is_training() const { return !scenario.has_value(); }
};

struct WorldConfig {
  std::uint64_t seed = 7;
  int n_categories = 10;
  int tools_per_category = 8;
  int tasks_per_scenario = 60;
  int train_tasks_per_group = 200;
  int held_out_categories = 2;
  int held_out_tools_per_category = 2;
  double error_rate = 0.03;            // flaky (task, tool) pairs that always fail
  double inaccessible_fraction = 0.08;
  double synonym_rate = 0.5;           // query verbs drawn from synonyms instead of the tool's verb
  double provider_mention_rate = 0.5;
  double dependency_rate = 0.5;

  void validate() const;  // throws ConfigError
};

Json world_config_to_json(const WorldConfig& c);
WorldConfig world_config_from_json(const Json& j);

class World {
 public:
  World(WorldConfig config, std::vector<ToolSpec> tools, std::vector<Task> tasks);

  const WorldConfig& config() const { return config_; }
  const std::vector<ToolSpec>& tools() const { return tools_; }
  const std::vector<Task>& tasks() const { return tasks_; }

  const ToolSpec* find_tool(const std::string& name) const;
  const ToolSpec& tool(const std::string& name) const;  // throws UnknownTool
  const Task& task(const std::string& id) const;         // throws UnknownTask

  std::vector<const Task*> training_tasks() const;
  std::vector<const Task*> scenario_tasks(Scenario s) const;

  // Seeded per (task, tool): such a tool errors on every call for this task.
  bool is_flaky(const Task& task, const std::string& tool) const;
  bool callable(const Task& task, const std::string& tool) const;

 private:
  WorldConfig config_;
  std::vector<ToolSpec> tools_;
  std::vector<Task> tasks_;
  std::map<std::string, std::size_t> tool_index_;
  std::map<std::string, std::size_t> task_index_;
};

World gen_world(const WorldConfig& config);

Json world_to_json(const World& world);
World world_from_json(const Json& j);
void save_world(const World& world, const std::string& path);
World load_world(const std::string& path);

inline constexpr const char* kInvalidKeyPayload =
    "{\"message\": \"The consumer key passed was not valid.\"}";

ApiResponse execute(const World& world, const Task& task, const ApiAction& action);

struct GoalState {
  std::vector<bool> satisfied;
  std::size_t n_satisfied = 0;
  bool all_satisfied = false;
  double partial_credit = 0.0;
};

GoalState goal_state(const World& world, const Task& task, const std::vector<HistoryStep>& history);

// Final-answer text an agent produces from what it has gathered. Anything
// short of every sub-goal comes out as an apology, which the keyword filter rejects.
std::string compose_final_answer(const World& world, const Task& task, const std::vector<HistoryStep>& history);

// Literal values an agent can read: quoted values in the query, then
// values revealed in successful responses, first-seen order, no duplicates.
std::vector<std::string> observable_values(const Task& task, const std::vector<HistoryStep>& history);
std::vector<std::string> revealed_values(const ApiResponse& response);
// Successful response carrying at least one result record.
bool has_results(const ApiResponse& response);

// Words a query may use in place of a tool verb; empty for unknown verbs.
const std::vector<std::string>& verb_synonyms(const std::string& verb);

// Every tool call on offer: each scope tool with each observable value bound
// to its first required parameter, plus the tool with no arguments.
std::vector<ApiAction> candidate_calls(const World& world, const Task& task, const std::vector<HistoryStep>& history);

}  // namespace toolpref
