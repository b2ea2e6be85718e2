#include "toolpref/dfsdt/engine.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include "toolpref/errors.hpp"
#include "toolpref/trajectory/tree_io.hpp"

namespace toolpref {

const char* to_string(BacktrackMode m) {
  return m == BacktrackMode::ParentOnly ? "parent_only" : "deepest_with_capacity";
}

BacktrackMode backtrack_mode_from_string(const std::string& s) {
  if (s == "parent_only") return BacktrackMode::ParentOnly;
  if (s == "deepest_with_capacity") return BacktrackMode::DeepestWithCapacity;
  throw ConfigError("unknown backtrack mode '" + s + "'");
}

void SearchBudget::validate() const {
  if (max_actions < 1) throw ConfigError("max_actions must be >= 1");
  if (max_children_per_node < 1) throw ConfigError("max_children_per_node must be >= 1");
}

Json budget_to_json(const SearchBudget& b) {
  return Json{{"max_actions", b.max_actions},
              {"max_children_per_node", b.max_children_per_node},
              {"backtrack", to_string(b.backtrack)}};
}

SearchBudget budget_from_json(const Json& j) {
  SearchBudget b;
  if (!j.is_object()) throw ConfigError("search budget must be an object");
  try {
    b.max_actions = j.value("max_actions", b.max_actions);
    b.max_children_per_node = j.value("max_children_per_node", b.max_children_per_node);
    if (j.contains("backtrack")) b.backtrack = backtrack_mode_from_string(j.at("backtrack").get<std::string>());
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("search budget: ") + e.what());
  }
  b.validate();
  return b;
}

const char* to_string(RolloutOutcome o) {
  switch (o) {
    case RolloutOutcome::Pass: return "pass";
    case RolloutOutcome::GiveUp: return "give_up";
    case RolloutOutcome::BudgetExhausted: return "budget_exhausted";
  }
  return "?";
}

RolloutOutcome rollout_outcome_from_string(const std::string& s) {
  if (s == "pass") return RolloutOutcome::Pass;
  if (s == "give_up") return RolloutOutcome::GiveUp;
  if (s == "budget_exhausted") return RolloutOutcome::BudgetExhausted;
  throw SchemaError("unknown rollout outcome '" + s + "'");
}

namespace {

std::size_t index_of_kind(const CandidateSet& set, NodeKind kind) {
  for (std::size_t i = 0; i < set.decisions.size(); ++i) {
    if (set.decisions[i].kind == kind && !set.is_masked(i)) return i;
  }
  throw EmptyCandidates(std::string("no unmasked ") + to_string(kind) + " candidate");
}

bool last_step_failed(const std::vector<HistoryStep>& history) {
  return !history.empty() && !has_results(history.back().response);
}

}  // namespace

LearnedPolicy::LearnedPolicy(PolicyParams params, double temperature)
    : params_(std::move(params)), temperature_(temperature) {
  if (!(temperature_ > 0.0)) throw ConfigError("temperature must be positive");
}

void LearnedPolicy::check_compatible(const World&) const {
  if (params_.weights.size() != kFeatureDim) {
    throw SchemaMismatch("policy has " + std::to_string(params_.weights.size()) + " weights, features have " +
                         std::to_string(kFeatureDim));
  }
}

std::size_t LearnedPolicy::choose(const DecisionContext& ctx, Rng& rng) const {
  return sample_index(params_, score_candidates(ctx.features, ctx.state, ctx.candidates), rng, temperature_);
}

std::size_t OraclePolicy::choose(const DecisionContext& ctx, Rng&) const {
  const auto& history = ctx.state.history;
  if (last_step_failed(history)) return index_of_kind(ctx.candidates, NodeKind::FinishGiveUp);
  const GoalState gs = goal_state(ctx.world, ctx.task, history);
  if (gs.all_satisfied) return index_of_kind(ctx.candidates, NodeKind::FinishAnswer);
  for (std::size_t i = 0; i < ctx.task.required_calls.size(); ++i) {
    if (gs.satisfied[i]) continue;
    const SubGoal& g = ctx.task.required_calls[i];
    const auto idx = ctx.candidates.index_of(Decision::call(ApiAction{g.tool, {{g.param, g.value}}}));
    if (idx && !ctx.candidates.is_masked(*idx)) return *idx;
    break;
  }
  return index_of_kind(ctx.candidates, NodeKind::FinishGiveUp);
}

NoisyExpertPolicy::NoisyExpertPolicy(double noise) : noise_(noise) {
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("expert noise must be in [0, 1]");
}

double NoisyExpertPolicy::plausibility(const FeatureVector& phi) {
  if (phi[kFinishAnswerBias] != 0.0) return 0.5 + phi[kAnswerCoverage];
  if (phi[kFinishGiveUpBias] != 0.0) return 0.5;
  return phi[kNounMatch] + 0.5 * phi[kVerbMatch] + 0.5 * phi[kProviderMatch] + 0.5 * phi[kTypeOk] -
         phi[kClauseResolved] - phi[kMissingArg] - phi[kRepeatOk];
}

std::size_t NoisyExpertPolicy::choose(const DecisionContext& ctx, Rng& rng) const {
  const auto& history = ctx.state.history;
  const auto& goals = ctx.task.required_calls;
  const CandidateSet& set = ctx.candidates;
  if (!history.empty() && !history.back().response.ok()) return index_of_kind(set, NodeKind::FinishGiveUp);

  // An empty result goes unnoticed: the expert books it against the sub-goal
  // it was working on and moves on, finding out only when it comes to answer.
  std::vector<bool> real(goals.size(), false);
  std::vector<bool> booked(goals.size(), false);
  for (const auto& step : history) {
    bool hit = false;
    for (std::size_t i = 0; i < goals.size(); ++i) {
      const std::string* v = step.action.argument(goals[i].param);
      if (step.response.ok() && step.action.tool_name == goals[i].tool && v && *v == goals[i].value) {
        real[i] = booked[i] = hit = true;
      }
    }
    if (hit || !step.response.ok()) continue;
    for (std::size_t i = 0; i < goals.size(); ++i) {
      if (!booked[i]) {
        booked[i] = true;
        break;
      }
    }
  }
  std::size_t best = 0;
  const auto open = std::find(booked.begin(), booked.end(), false);
  if (open == booked.end()) {
    const bool done = !goals.empty() && std::all_of(real.begin(), real.end(), [](bool b) { return b; });
    return index_of_kind(set, done ? NodeKind::FinishAnswer : NodeKind::FinishGiveUp);
  }
  const SubGoal& g = goals[static_cast<std::size_t>(open - booked.begin())];
  const auto planned = set.index_of(Decision::call(ApiAction{g.tool, {{g.param, g.value}}}));
  if (!planned || set.is_masked(*planned)) return index_of_kind(set, NodeKind::FinishGiveUp);
  best = *planned;
  if (!bernoulli(rng, noise_)) return best;

  // A slip: any other unmasked decision, tilted toward plausible-looking ones.
  const auto info = ctx.features.analyze(ctx.state.history);
  std::vector<std::size_t> idx;
  std::vector<double> weight;
  double total = 0.0;
  for (std::size_t i = 0; i < set.decisions.size(); ++i) {
    if (i == best || set.is_masked(i)) continue;
    const double w = std::exp(2.0 * plausibility(ctx.features.featurize(info, set.decisions[i])));
    idx.push_back(i);
    weight.push_back(w);
    total += w;
  }
  if (idx.empty()) return best;
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    acc += weight[k];
    if (u < acc) return idx[k];
  }
  return idx.back();
}

std::size_t RandomPolicy::choose(const DecisionContext& ctx, Rng& rng) const {
  std::vector<std::size_t> open;
  for (std::size_t i = 0; i < ctx.candidates.decisions.size(); ++i) {
    if (!ctx.candidates.is_masked(i)) open.push_back(i);
  }
  if (open.empty()) throw EmptyCandidates("no unmasked candidates");
  return open[uniform_index(rng, open.size())];
}

std::vector<Decision> candidate_decisions(const World& world, const Task& task,
                                          const std::vector<HistoryStep>& history) {
  std::vector<Decision> out;
  for (auto& a : candidate_calls(world, task, history)) out.push_back(Decision::call(std::move(a)));
  out.push_back(Decision::answer());
  out.push_back(Decision::give_up());
  return out;
}

RolloutResult run_dfsdt(const SearchPolicy& policy, const World& world, const Task& task, const SearchBudget& budget,
                        std::uint64_t seed, const TreeOptions& options) {
  budget.validate();
  policy.check_compatible(world);
  for (const auto& name : task.scope) {
    if (!world.find_tool(name)) throw SchemaMismatch("task " + task.id + " offers unknown tool " + name);
  }

  Rng rng(seed);
  const FeatureContext features(world, task.query);

  struct Slot {
    bool dead = false;
    std::vector<Decision> tried;
    std::size_t n_candidates = 0;  // 0 until first expansion
  };
  std::vector<TreeNode> nodes;
  std::vector<Slot> slots;
  TreeNode root;
  root.id = 0;
  root.kind = NodeKind::Root;
  nodes.push_back(root);
  slots.emplace_back();

  const auto max_children = static_cast<std::size_t>(budget.max_children_per_node);
  auto has_capacity = [&](NodeId id) {
    const Slot& s = slots[id];
    if (s.dead || s.tried.size() >= max_children) return false;
    return s.n_candidates == 0 || s.tried.size() < s.n_candidates;
  };
  auto history_of = [&](NodeId id) {
    std::vector<HistoryStep> h;
    for (std::optional<NodeId> cur = id; cur && nodes[*cur].kind != NodeKind::Root; cur = nodes[*cur].parent) {
      h.push_back(HistoryStep{*nodes[*cur].action, *nodes[*cur].response});
    }
    std::reverse(h.begin(), h.end());
    return h;
  };

  RolloutOutcome outcome = RolloutOutcome::BudgetExhausted;
  std::optional<std::string> final_answer;
  std::optional<int> success_steps;
  int actions = 0;
  NodeId current = 0;

  while (true) {
    if (actions >= budget.max_actions) {
      outcome = RolloutOutcome::BudgetExhausted;
      break;
    }
    ReasoningState state{task.query, history_of(current)};
    CandidateSet set;
    set.decisions = candidate_decisions(world, task, state.history);
    set.masked.resize(set.decisions.size());
    for (std::size_t i = 0; i < set.decisions.size(); ++i) {
      const auto& tried = slots[current].tried;
      set.masked[i] = std::find(tried.begin(), tried.end(), set.decisions[i]) != tried.end();
    }
    slots[current].n_candidates = set.decisions.size();
    if (nodes[current].candidates.empty()) nodes[current].candidates = set.decisions;

    const std::size_t idx = policy.choose(DecisionContext{world, task, features, state, set}, rng);
    if (idx >= set.decisions.size() || set.is_masked(idx)) throw MaskedAction("policy chose a masked candidate");
    const Decision d = set.decisions[idx];
    ++actions;

    TreeNode child;
    child.id = static_cast<NodeId>(nodes.size());
    child.parent = current;
    child.kind = d.kind;
    child.action = d.action;
    if (!slots[current].tried.empty()) {
      std::string note = "previously tried:";
      for (std::size_t i = 0; i < slots[current].tried.size(); ++i) {
        note += (i ? " | " : " ") + slots[current].tried[i].to_string();
      }
      child.diversity_note = std::move(note);
    }
    slots[current].tried.push_back(d);

    if (d.kind == NodeKind::Call) {
      child.response = execute(world, task, d.action);
      nodes.push_back(std::move(child));
      slots.emplace_back();
      current = nodes.back().id;
      continue;
    }
    if (d.kind == NodeKind::FinishAnswer) {
      child.final_answer = compose_final_answer(world, task, state.history);
      final_answer = child.final_answer;
      success_steps = static_cast<int>(state.history.size()) + 1;
      nodes.push_back(std::move(child));
      slots.emplace_back();
      outcome = RolloutOutcome::Pass;
      break;
    }
    // Give up: abandon `current` and return to an earlier node.
    nodes.push_back(std::move(child));
    slots.emplace_back();
    slots.back().dead = true;
    slots[current].dead = true;
    std::optional<NodeId> target;
    std::optional<NodeId> p = nodes[current].parent;
    if (budget.backtrack == BacktrackMode::ParentOnly) {
      if (p && has_capacity(*p)) target = p;
    } else {
      for (; p; p = nodes[*p].parent) {
        if (has_capacity(*p)) {
          target = p;
          break;
        }
      }
    }
    if (!target) {
      outcome = RolloutOutcome::GiveUp;
      break;
    }
    current = *target;
  }

  return RolloutResult{task.id,
                       DecisionTree::build(task.query, std::move(nodes), options, "rollout-" + task.id, task.id),
                       outcome,
                       std::move(final_answer),
                       actions,
                       success_steps,
                       seed};
}

RolloutResult run_dfsdt(const SearchPolicy& policy, const World& world, const std::string& task_id,
                        const SearchBudget& budget, std::uint64_t seed, const TreeOptions& options) {
  return run_dfsdt(policy, world, world.task(task_id), budget, seed, options);
}

DecisionTree annotate_expert_tree(const World& world, const Task& task, double expert_noise, std::uint64_t seed,
                                  const SearchBudget& budget) {
  const NoisyExpertPolicy expert(expert_noise);
  const DecisionTree t = run_dfsdt(expert, world, task, budget, seed).tree;
  std::vector<TreeNode> nodes;
  for (NodeId id : t.document_order()) nodes.push_back(t.node(id));
  return DecisionTree::build(t.instruction(), std::move(nodes), t.options(), "tree-" + task.id, task.id);
}

std::uint64_t rollout_seed(std::uint64_t seed, const std::string& task_id) {
  return hash_combine(hash_combine(seed, "rollout"), task_id);
}

std::vector<RolloutResult> batch_rollout(const SearchPolicy& policy, const World& world,
                                         const std::vector<const Task*>& tasks, const SearchBudget& budget,
                                         std::uint64_t seed, int jobs) {
  std::vector<std::optional<RolloutResult>> slots(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      slots[i] = run_dfsdt(policy, world, *tasks[i], budget, rollout_seed(seed, tasks[i]->id));
    }
  };
  const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)), tasks.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::vector<RolloutResult> out;
  out.reserve(tasks.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

bool replay_matches(const World& world, const Task& task, const DecisionTree& tree) {
  for (NodeId id : tree.document_order()) {
    const TreeNode& n = tree.node(id);
    if (n.kind != NodeKind::Call) continue;
    if (!n.response || execute(world, task, *n.action) != *n.response) return false;
  }
  return true;
}

Json rollout_to_json(const RolloutResult& r) {
  Json j;
  j["task_id"] = r.task_id;
  j["seed"] = r.seed;
  j["outcome"] = to_string(r.outcome);
  j["final_answer"] = r.final_answer ? Json(*r.final_answer) : Json(nullptr);
  j["actions_used"] = r.actions_used;
  j["success_path_steps"] = r.success_path_steps ? Json(*r.success_path_steps) : Json(nullptr);
  j["tree"] = tree_to_json(r.tree);
  return j;
}

RolloutResult rollout_from_json(const Json& j, const TreeOptions& options) {
  try {
    return RolloutResult{
        j.at("task_id").get<std::string>(),
        tree_from_json(j.at("tree"), options),
        rollout_outcome_from_string(j.at("outcome").get<std::string>()),
        j.at("final_answer").is_null() ? std::nullopt : std::optional<std::string>(j.at("final_answer")),
        j.at("actions_used").get<int>(),
        j.at("success_path_steps").is_null() ? std::nullopt : std::optional<int>(j.at("success_path_steps")),
        j.at("seed").get<std::uint64_t>()};
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("rollout record: ") + e.what());
  }
}

void write_rollouts(const std::string& path, const std::vector<RolloutResult>& results, const Json& meta) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write rollouts '" + path + "'");
  if (!meta.is_null()) out << Json{{"_meta", meta}}.dump() << '\n';
  for (const auto& r : results) out << rollout_to_json(r).dump() << '\n';
}

std::vector<RolloutResult> read_rollouts(const std::string& path, const TreeOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open rollouts '" + path + "'");
  std::vector<RolloutResult> out;
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
    if (j.contains("_meta")) continue;
    out.push_back(rollout_from_json(j, options));
  }
  return out;
}

}  // namespace toolpref
