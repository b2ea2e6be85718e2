#include "toolpref/cli/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "toolpref/errors.hpp"
#include "toolpref/random.hpp"

namespace toolpref {

RunPaths RunPaths::resolved() const {
  RunPaths p = *this;
  auto fill = [&](std::string& field, const char* name) {
    if (field.empty()) field = dir + "/" + name;
  };
  fill(p.world, "world.json");
  fill(p.trees, "trees.jsonl");
  fill(p.pairs, "pairs.jsonl");
  fill(p.sft, "sft.jsonl");
  fill(p.forge_stats, "forge_stats.json");
  fill(p.sft_checkpoint, "policy_sft.json");
  fill(p.dpo_checkpoint, "policy_dpo.json");
  fill(p.sft_log, "train_sft.jsonl");
  fill(p.dpo_log, "train_dpo.jsonl");
  fill(p.rollouts, "rollouts");
  fill(p.reports, "reports");
  return p;
}

TrainConfig desk_scale_train_config() {
  TrainConfig c;
  c.sft_lr = 0.3;
  c.dpo_lr = 1.0;
  c.sft_epochs = 2;
  c.dpo_epochs = 3;
  c.beta = 0.5;
  return c;
}

void RunConfig::validate() const {
  world.validate();
  train.validate();
  budget.validate();
  if (!(expert_noise >= 0.0 && expert_noise <= 1.0)) throw ConfigError("expert_noise must be in [0, 1]");
  if (!(sft_fraction > 0.0 && sft_fraction <= 1.0)) throw ConfigError("sft_fraction must be in (0, 1]");
  if (!(pair_fraction > 0.0 && pair_fraction <= 1.0)) throw ConfigError("pair_fraction must be in (0, 1]");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (eval_seeds.empty()) throw ConfigError("eval_seeds must not be empty");
  if (paths.dir.empty()) throw ConfigError("paths.dir must not be empty");
}

namespace {

Json paths_to_json(const RunPaths& p) {
  return Json{{"dir", p.dir},
              {"world", p.world},
              {"trees", p.trees},
              {"pairs", p.pairs},
              {"sft", p.sft},
              {"forge_stats", p.forge_stats},
              {"sft_checkpoint", p.sft_checkpoint},
              {"dpo_checkpoint", p.dpo_checkpoint},
              {"sft_log", p.sft_log},
              {"dpo_log", p.dpo_log},
              {"rollouts", p.rollouts},
              {"reports", p.reports}};
}

// Rejects keys the default document does not have, recursively for objects.
void check_keys(const Json& given, const Json& known, const std::string& where) {
  if (!given.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("unknown config key '" + where + it.key() + "'");
    const Json& k = known.at(it.key());
    if (k.is_object()) check_keys(it.value(), k, where + it.key() + ".");
  }
}

}  // namespace

Json run_config_to_json(const RunConfig& c) {
  Json j;
  j["paths"] = paths_to_json(c.paths);
  j["world"] = world_config_to_json(c.world);
  j["train"] = train_config_to_json(c.train);
  j["budget"] = budget_to_json(c.budget);
  j["granularity"] = to_string(c.granularity);
  j["expert_noise"] = c.expert_noise;
  j["seed"] = c.seed;
  j["eval_seeds"] = c.eval_seeds;
  j["sft_fraction"] = c.sft_fraction;
  j["pair_fraction"] = c.pair_fraction;
  j["jobs"] = c.jobs;
  return j;
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  check_keys(j, run_config_to_json(c), "");
  try {
    if (j.contains("paths")) {
      const Json& p = j.at("paths");
      auto get = [&](const char* key, std::string& field) { field = p.value(key, field); };
      get("dir", c.paths.dir);
      get("world", c.paths.world);
      get("trees", c.paths.trees);
      get("pairs", c.paths.pairs);
      get("sft", c.paths.sft);
      get("forge_stats", c.paths.forge_stats);
      get("sft_checkpoint", c.paths.sft_checkpoint);
      get("dpo_checkpoint", c.paths.dpo_checkpoint);
      get("sft_log", c.paths.sft_log);
      get("dpo_log", c.paths.dpo_log);
      get("rollouts", c.paths.rollouts);
      get("reports", c.paths.reports);
    }
    if (j.contains("world")) c.world = world_config_from_json(j.at("world"));
    if (j.contains("train")) {
      // Layer over the desk-scale defaults rather than the struct defaults.
      Json t = train_config_to_json(c.train);
      for (auto it = j.at("train").begin(); it != j.at("train").end(); ++it) t[it.key()] = it.value();
      c.train = train_config_from_json(t);
    }
    if (j.contains("budget")) c.budget = budget_from_json(j.at("budget"));
    if (j.contains("granularity")) c.granularity = granularity_from_string(j.at("granularity").get<std::string>());
    c.expert_noise = j.value("expert_noise", c.expert_noise);
    c.seed = j.value("seed", c.seed);
    if (j.contains("eval_seeds")) c.eval_seeds = j.at("eval_seeds").get<std::vector<std::uint64_t>>();
    c.sft_fraction = j.value("sft_fraction", c.sft_fraction);
    c.pair_fraction = j.value("pair_fraction", c.pair_fraction);
    c.jobs = j.value("jobs", c.jobs);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  } catch (const SchemaError& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return run_config_from_json(j);
}

void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json* cur = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    if (!cur->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*cur)[part] = value;
      return;
    }
    cur = &(*cur)[part];
    if (cur->is_null()) *cur = Json::object();
    start = dot + 1;
  }
}

std::string config_hash(const RunConfig& c) {
  std::ostringstream o;
  o << std::hex;
  o.width(16);
  o.fill('0');
  o << fnv1a(run_config_to_json(c).dump());
  return o.str();
}

Json artifact_meta(const RunConfig& c, const std::string& command) {
  return Json{{"command", command},
              {"config_hash", config_hash(c)},
              {"seeds", Json{{"run", c.seed}, {"world", c.world.seed}, {"train", c.train.seed}}}};
}

std::vector<DecisionTree> annotate_training_trees(const World& world, double expert_noise, std::uint64_t seed,
                                                  const SearchBudget& budget) {
  std::vector<DecisionTree> trees;
  for (const Task* t : world.training_tasks()) {
    trees.push_back(annotate_expert_tree(world, *t, expert_noise, hash_combine(seed, t->id), budget));
  }
  return trees;
}

Datasets forge_datasets(const std::vector<DecisionTree>& trees, Granularity g, const ApiDocs& docs,
                        std::uint64_t seed, double sft_fraction, double pair_fraction) {
  Datasets d;
  const auto q = qualifying_trees(trees);
  d.trees_qualifying = q.size();
  if (!q.empty()) {
    const auto n = static_cast<std::size_t>(std::llround(static_cast<double>(q.size()) * sft_fraction));
    d.sft = resample_sft_set(q, std::max<std::size_t>(n, 1), seed);
  }
  PreferenceCorpus corpus = build_corpus(trees, g, docs);
  d.stats = std::move(corpus.stats);
  const auto n_pairs =
      static_cast<std::size_t>(std::llround(static_cast<double>(corpus.records.size()) * pair_fraction));
  d.pairs = sample_pairs_by_instruction(corpus.records, n_pairs, seed);
  return d;
}

SftRef sft_ref(const SftExample& e) { return SftRef{e.source_tree, e.node}; }

PairRef pair_ref(const PreferenceRecord& r) {
  return PairRef{r.pair.source_tree, r.pair.branch_node, r.pair.preferred_path, r.pair.dispreferred_path};
}

SftRef sft_ref_from_json(const Json& j) {
  try {
    return SftRef{j.at("source_tree").get<std::string>(), j.at("node").get<NodeId>()};
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("sft record: ") + e.what());
  }
}

PairRef pair_ref_from_json(const Json& j) {
  try {
    return PairRef{j.at("source_tree").get<std::string>(), j.at("branch_node").get<NodeId>(),
                   j.at("preferred_path").get<std::vector<NodeId>>(),
                   j.at("dispreferred_path").get<std::vector<NodeId>>()};
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("pair record: ") + e.what());
  }
}

namespace {

std::map<std::string, const DecisionTree*> index_trees(const std::vector<DecisionTree>& trees) {
  std::map<std::string, const DecisionTree*> by_id;
  for (const auto& t : trees) by_id[t.tree_id()] = &t;
  return by_id;
}

const DecisionTree& find_tree(const std::map<std::string, const DecisionTree*>& by_id, const std::string& id) {
  auto it = by_id.find(id);
  if (it == by_id.end()) throw SchemaError("dataset refers to unknown tree '" + id + "'");
  return *it->second;
}

std::vector<PairStep> payload_after(const std::vector<NodeId>& path, NodeId branch) {
  auto it = std::find(path.begin(), path.end(), branch);
  if (it == path.end() || it + 1 == path.end()) {
    throw SchemaError("path does not continue past branch node " + std::to_string(branch));
  }
  std::vector<PairStep> out;
  for (++it; it != path.end(); ++it) out.push_back(PairStep{*it, {}, std::nullopt});
  return out;
}

}  // namespace

SftBatch bind_sft_refs(const World& world, const std::vector<DecisionTree>& trees, const std::vector<SftRef>& refs) {
  const auto by_id = index_trees(trees);
  SftBatch out;
  for (const auto& r : refs) {
    const DecisionTree& t = find_tree(by_id, r.source_tree);
    SftExample e;
    e.source_tree = r.source_tree;
    e.node = r.node;
    out.push_back(bind_sft(world, t, e));
  }
  return out;
}

DpoBatch bind_pair_refs(const World& world, const std::vector<DecisionTree>& trees, const std::vector<PairRef>& refs) {
  const auto by_id = index_trees(trees);
  DpoBatch out;
  for (const auto& r : refs) {
    const DecisionTree& t = find_tree(by_id, r.source_tree);
    PreferencePair p;
    p.branch_node = r.branch_node;
    p.preferred = payload_after(r.preferred_path, r.branch_node);
    p.dispreferred = payload_after(r.dispreferred_path, r.branch_node);
    out.push_back(bind_pair(world, t, p));
  }
  return out;
}

std::vector<const Task*> evaluation_tasks(const World& world) {
  std::vector<const Task*> out;
  for (Scenario s : kAllScenarios) {
    for (const Task* t : world.scenario_tasks(s)) out.push_back(t);
  }
  return out;
}

PolicyEval evaluate_policy(const std::string& label, const World& world, const PolicyParams& params,
                           const SearchBudget& budget, std::uint64_t seed, int jobs,
                           const std::vector<RolloutResult>* baseline, const EvalOptions& options) {
  LearnedPolicy policy(params);
  PolicyEval e;
  e.results = batch_rollout(policy, world, evaluation_tasks(world), budget, seed, jobs);
  const OracleJudge judge(world);
  e.report = evaluate(label, world, e.results, options, baseline, baseline ? &judge : nullptr);
  return e;
}

SeedOutcome run_seed(const RunConfig& config, std::uint64_t seed, const std::vector<Granularity>& granularities) {
  WorldConfig wc = config.world;
  wc.seed = seed;
  TrainConfig tc = config.train;
  tc.seed = seed;
  const World world = gen_world(wc);
  const auto trees = annotate_training_trees(world, config.expert_noise, seed, config.budget);
  const ApiDocs docs = api_docs_from_world(world);
  const auto q = qualifying_trees(trees);

  SeedOutcome out;
  out.seed = seed;
  // The SFT set does not depend on the pair granularity.
  const Datasets base = forge_datasets(trees, config.granularity, docs, seed, config.sft_fraction, config.pair_fraction);
  std::vector<SftRef> sft_refs;
  for (const auto& e : base.sft) sft_refs.push_back(sft_ref(e));
  const SftBatch sb = bind_sft_refs(world, q, sft_refs);
  out.sft_examples = sb.size();
  const PolicyParams sft_params = train_sft(PolicyParams{}, sb, tc).params;
  out.sft = evaluate_policy("sft", world, sft_params, config.budget, seed, config.jobs);

  for (Granularity g : granularities) {
    const Datasets d =
        g == config.granularity ? base : forge_datasets(trees, g, docs, seed, config.sft_fraction, config.pair_fraction);
    std::vector<PairRef> refs;
    for (const auto& r : d.pairs) refs.push_back(pair_ref(r));
    const DpoBatch db = bind_pair_refs(world, q, refs);
    out.pair_counts.emplace_back(g, db.size());
    const PolicyParams dpo = train_dpo(sft_params, db, tc).params;
    out.dpo.emplace_back(g, evaluate_policy(std::string("sft+dpo(") + to_string(g) + ")", world, dpo, config.budget,
                                            seed, config.jobs, &out.sft.results));
  }
  return out;
}

}  // namespace toolpref
