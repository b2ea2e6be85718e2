#include "toolpref/cli/commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "toolpref/cli/pipeline.hpp"
#include "toolpref/errors.hpp"
#include "toolpref/trajectory/tree_io.hpp"

namespace toolpref {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  int jobs = 0;

  std::string granularity;
  std::string stage = "both";
  std::string checkpoint;
  std::string baseline_checkpoint;
  std::string rollouts_in;
  std::string baseline_rollouts_in;
  std::string label;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  bool multi_seed = false;
  bool pass_only_steps = false;
  std::string judge = "oracle";
  std::optional<double> min_pass_rate;

  std::vector<std::string> report_inputs;
  std::string metric = "all";
  std::string baseline_label;
  std::string treated_label;
  std::optional<double> min_pass_gain;
  std::optional<double> min_step_gain;
};

RunConfig build_config(const Options& o) {
  Json j = Json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ConfigError("cannot open config '" + o.config_path + "'");
    try {
      j = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ConfigError("config '" + o.config_path + "': " + e.what());
    }
  }
  for (const auto& a : o.overrides) apply_override(j, a);
  RunConfig c = run_config_from_json(j);
  if (o.jobs > 0) c.jobs = o.jobs;
  c.paths = c.paths.resolved();
  return c;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw ConfigError(what + " '" + path + "' does not exist");
}

void ensure_parent(const std::string& path) {
  const fs::path p = fs::path(path).parent_path();
  if (!p.empty()) fs::create_directories(p);
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

Json with(Json meta, const Json& extra) {
  for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  return meta;
}

std::vector<Json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::vector<Json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw SchemaError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

World load_world_checked(const RunConfig& c) {
  require_file(c.paths.world, "world file");
  return load_world(c.paths.world);
}

// -- commands ---------------------------------------------------------------

int cmd_gen_world(const RunConfig& c, std::ostream& out) {
  c.world.validate();
  const World w = gen_world(c.world);
  Json j = world_to_json(w);
  j["_meta"] = artifact_meta(c, "gen-world");
  write_text(c.paths.world, j.dump(1) + "\n");

  std::size_t held = 0, blocked = 0;
  for (const auto& t : w.tools()) {
    held += t.held_out ? 1 : 0;
    blocked += t.accessible ? 0 : 1;
  }
  out << "world: " << c.paths.world << "\n";
  out << "tools: " << w.tools().size() << " (held out " << held << ", inaccessible " << blocked << ")\n";
  out << "training tasks: " << w.training_tasks().size() << "\n";
  for (Scenario s : kAllScenarios) {
    const auto ts = w.scenario_tasks(s);
    std::size_t unsolvable = 0;
    for (const Task* t : ts) unsolvable += t->solvable ? 0 : 1;
    out << "  " << to_string(s) << ": " << ts.size() << " tasks, " << unsolvable << " unsolvable\n";
  }
  return kExitOk;
}

int cmd_annotate(const RunConfig& c, std::ostream& out) {
  const World w = load_world_checked(c);
  const auto trees = annotate_training_trees(w, c.expert_noise, c.seed, c.budget);
  ensure_parent(c.paths.trees);
  std::ofstream f(c.paths.trees, std::ios::binary);
  if (!f) throw Error("cannot write '" + c.paths.trees + "'");
  write_tree_corpus(f, trees, with(artifact_meta(c, "annotate"), Json{{"expert_noise", c.expert_noise}}));

  std::size_t linear = 0, with_failed = 0, solved = 0, step_pairs = 0;
  for (const auto& t : trees) {
    bool branching = false;
    for (NodeId id : t.document_order()) branching |= t.node(id).children.size() > 1;
    linear += branching ? 0 : 1;
    solved += success_paths(t).empty() ? 0 : 1;
    if (has_failed_branch(t)) {
      ++with_failed;
      step_pairs += extract_stepwise(t).size();
    }
  }
  out << "trees: " << trees.size() << " -> " << c.paths.trees << "\n";
  out << "  solved " << solved << ", linear " << linear << ", with a failed branch " << with_failed << "\n";
  out << "  step-wise pair yield before dedup: " << step_pairs << "\n";
  return kExitOk;
}

int cmd_forge(const RunConfig& c, const Options& o, std::ostream& out) {
  const World w = load_world_checked(c);
  require_file(c.paths.trees, "tree corpus");
  const Granularity g = o.granularity.empty() ? c.granularity : granularity_from_string(o.granularity);
  const auto trees = read_tree_corpus_file(c.paths.trees);
  const ApiDocs docs = api_docs_from_world(w);
  const Datasets d = forge_datasets(trees, g, docs, c.seed, c.sft_fraction, c.pair_fraction);
  const Json meta = with(artifact_meta(c, "forge"), Json{{"granularity", to_string(g)}});

  std::ostringstream pairs;
  pairs << Json{{"_meta", meta}}.dump() << '\n';
  for (const auto& r : d.pairs) pairs << preference_record_to_json(r).dump() << '\n';
  write_text(c.paths.pairs, pairs.str());

  std::ostringstream sft;
  sft << Json{{"_meta", meta}}.dump() << '\n';
  for (const auto& e : d.sft) sft << sft_example_to_json(e, docs).dump() << '\n';
  write_text(c.paths.sft, sft.str());

  Json stats = corpus_stats_to_json(d.stats);
  stats["trees_qualifying"] = d.trees_qualifying;
  stats["pairs_sampled"] = d.pairs.size();
  stats["sft_examples"] = d.sft.size();
  stats["_meta"] = meta;
  write_text(c.paths.forge_stats, stats.dump(1) + "\n");

  out << "granularity: " << to_string(g) << "\n";
  out << "trees in " << d.stats.trees_in << ", kept " << d.stats.trees_kept << "\n";
  out << "pairs extracted " << d.stats.pairs_extracted << ", duplicates dropped " << d.stats.duplicates_dropped
      << ", emitted " << d.stats.pairs_emitted << ", sampled " << d.pairs.size() << " -> " << c.paths.pairs << "\n";
  out << "sft examples " << d.sft.size() << " -> " << c.paths.sft << "\n";
  return kExitOk;
}

std::vector<Json> records_of(const std::string& path) {
  std::vector<Json> out;
  for (auto& j : read_jsonl(path)) {
    if (!j.contains("_meta")) out.push_back(std::move(j));
  }
  return out;
}

void write_log(const std::string& path, const std::vector<TrainLogEntry>& log, const Json& meta) {
  std::ostringstream s;
  s << Json{{"_meta", meta}}.dump() << '\n';
  for (const auto& e : log) s << e.to_json().dump() << '\n';
  write_text(path, s.str());
}

int cmd_train(const RunConfig& c, const Options& o, std::ostream& out) {
  if (o.stage != "sft" && o.stage != "dpo" && o.stage != "both") {
    throw ConfigError("stage must be sft, dpo or both");
  }
  const World w = load_world_checked(c);
  require_file(c.paths.trees, "tree corpus");
  const bool do_sft = o.stage != "dpo";
  const bool do_dpo = o.stage != "sft";
  if (do_sft) require_file(c.paths.sft, "SFT dataset");
  if (do_dpo) require_file(c.paths.pairs, "preference dataset");
  if (o.stage == "dpo") require_file(c.paths.sft_checkpoint, "SFT checkpoint (run train --stage sft first)");

  const auto q = qualifying_trees(read_tree_corpus_file(c.paths.trees));
  if (do_sft) {
    std::vector<SftRef> refs;
    for (const auto& j : records_of(c.paths.sft)) refs.push_back(sft_ref_from_json(j));
    const SftBatch data = bind_sft_refs(w, q, refs);
    const TrainResult r = train_sft(PolicyParams{}, data, c.train);
    const Json meta = with(artifact_meta(c, "train"), Json{{"stage", "sft"}, {"examples", data.size()}});
    ensure_parent(c.paths.sft_checkpoint);
    save_checkpoint(r.params, c.paths.sft_checkpoint, meta);
    write_log(c.paths.sft_log, r.log, meta);
    out << "sft: " << data.size() << " examples, " << r.log.size() << " updates";
    if (!r.log.empty()) out << ", loss " << r.log.front().loss << " -> " << r.log.back().loss;
    out << " -> " << c.paths.sft_checkpoint << "\n";
  }
  if (do_dpo) {
    const PolicyParams sft = load_checkpoint(c.paths.sft_checkpoint);
    std::vector<PairRef> refs;
    for (const auto& j : records_of(c.paths.pairs)) refs.push_back(pair_ref_from_json(j));
    const DpoBatch data = bind_pair_refs(w, q, refs);
    const TrainResult r = train_dpo(sft, data, c.train);
    const Json meta = with(artifact_meta(c, "train"), Json{{"stage", "dpo"}, {"pairs", data.size()}});
    ensure_parent(c.paths.dpo_checkpoint);
    save_checkpoint(r.params, c.paths.dpo_checkpoint, meta);
    write_log(c.paths.dpo_log, r.log, meta);
    out << "dpo: " << data.size() << " pairs, " << r.log.size() << " updates";
    if (!r.log.empty()) out << ", loss " << r.log.front().loss << " -> " << r.log.back().loss;
    out << " -> " << c.paths.dpo_checkpoint << "\n";
  }
  return kExitOk;
}

std::string label_for(const Options& o, const std::string& checkpoint) {
  if (!o.label.empty()) return o.label;
  if (!checkpoint.empty()) return fs::path(checkpoint).stem().string();
  throw ConfigError("a --label is required");
}

std::vector<RolloutResult> roll(const RunConfig& c, const World& w, const std::string& checkpoint, std::uint64_t seed) {
  require_file(checkpoint, "checkpoint");
  LearnedPolicy policy(load_checkpoint(checkpoint));
  return batch_rollout(policy, w, evaluation_tasks(w), c.budget, seed, c.jobs);
}

int cmd_rollout(const RunConfig& c, const Options& o, std::ostream& out) {
  if (o.checkpoint.empty()) throw ConfigError("rollout needs --checkpoint");
  const World w = load_world_checked(c);
  const std::uint64_t seed = o.seed.value_or(c.seed);
  const auto results = roll(c, w, o.checkpoint, seed);
  const std::string path = c.paths.rollouts + "/" + label_for(o, o.checkpoint) + ".jsonl";
  ensure_parent(path);
  write_rollouts(path, results,
                 with(artifact_meta(c, "rollout"), Json{{"checkpoint", o.checkpoint}, {"rollout_seed", seed}}));
  std::map<std::string, std::size_t> counts;
  for (const auto& r : results) ++counts[to_string(r.outcome)];
  out << "rollouts: " << results.size() << " -> " << path << "\n";
  for (const auto& [k, v] : counts) out << "  " << k << ": " << v << "\n";
  return kExitOk;
}

const char* const kTableMetrics[] = {"pass_rate", "pass_rate_v2", "win_rate", "avg_steps"};

int cmd_eval(const RunConfig& c, const Options& o, std::ostream& out) {
  if (o.checkpoint.empty() == o.rollouts_in.empty()) throw ConfigError("eval needs exactly one of --checkpoint, --rollouts");
  if (!o.baseline_checkpoint.empty() && !o.baseline_rollouts_in.empty()) {
    throw ConfigError("give at most one of --baseline, --baseline-rollouts");
  }
  if (o.judge != "oracle" && o.judge != "keyword") throw ConfigError("judge must be oracle or keyword");
  const World w = load_world_checked(c);
  std::vector<std::uint64_t> seeds = o.seeds;
  if (seeds.empty()) seeds = o.multi_seed ? c.eval_seeds : std::vector<std::uint64_t>{o.seed.value_or(c.seed)};
  if (!o.rollouts_in.empty() && seeds.size() > 1) throw ConfigError("stored rollouts cover a single seed");
  const std::string label = label_for(o, o.checkpoint.empty() ? o.rollouts_in : o.checkpoint);

  std::unique_ptr<Judge> judge;
  if (o.judge == "oracle") {
    judge = std::make_unique<OracleJudge>(w);
  } else {
    judge = std::make_unique<KeywordJudge>();
  }
  EvalOptions opts;
  opts.steps_scope = o.pass_only_steps ? StepsScope::PassOnly : StepsScope::PassAndGiveUp;

  std::vector<MetricsReport> reports;
  std::ostringstream lines;
  for (std::uint64_t seed : seeds) {
    std::vector<RolloutResult> a;
    if (!o.rollouts_in.empty()) {
      require_file(o.rollouts_in, "rollouts");
      a = read_rollouts(o.rollouts_in);
    } else {
      a = roll(c, w, o.checkpoint, seed);
    }
    std::optional<std::vector<RolloutResult>> b;
    if (!o.baseline_checkpoint.empty()) b = roll(c, w, o.baseline_checkpoint, seed);
    if (!o.baseline_rollouts_in.empty()) {
      require_file(o.baseline_rollouts_in, "baseline rollouts");
      b = read_rollouts(o.baseline_rollouts_in);
    }
    MetricsReport r = evaluate(label, w, a, opts, b ? &*b : nullptr, b ? judge.get() : nullptr);
    Json meta = artifact_meta(c, "eval");
    meta["rollout_seed"] = seed;
    if (b) meta["baseline"] = o.baseline_checkpoint.empty() ? o.baseline_rollouts_in : o.baseline_checkpoint;
    lines << report_to_jsonl(r, meta);
    reports.push_back(std::move(r));
  }
  const std::string path = c.paths.reports + "/" + label + ".jsonl";
  write_text(path, lines.str());

  if (reports.size() == 1) {
    for (const char* m : kTableMetrics) out << render_table(reports, m) << '\n';
  } else {
    const SeedSummary s = summarize_seeds(reports);
    write_text(c.paths.reports + "/" + label + ".summary.json",
               with(seed_summary_to_json(s), Json{{"_meta", artifact_meta(c, "eval")}, {"seeds", seeds}}).dump(1) + "\n");
    for (const char* m : kTableMetrics) out << render_summary_table({s}, m) << '\n';
  }
  out << "report -> " << path << "\n";

  if (o.min_pass_rate) {
    double mean = 0.0;
    for (const auto& r : reports) mean += r.average.pass_rate;
    mean /= static_cast<double>(reports.size());
    if (mean < *o.min_pass_rate) {
      out << "FAIL: average pass rate " << mean << " below " << *o.min_pass_rate << "\n";
      return kExitThreshold;
    }
    out << "ok: average pass rate " << mean << " >= " << *o.min_pass_rate << "\n";
  }
  return kExitOk;
}

// A report file holds one report per rollout seed.
std::vector<MetricsReport> load_reports(const std::string& path) {
  require_file(path, "report");
  std::map<std::uint64_t, std::string> by_seed;
  std::vector<std::uint64_t> order;
  for (const auto& j : read_jsonl(path)) {
    const std::uint64_t seed = j.value("rollout_seed", std::uint64_t{0});
    if (!by_seed.count(seed)) order.push_back(seed);
    by_seed[seed] += j.dump() + "\n";
  }
  if (order.empty()) throw SchemaError("report '" + path + "' is empty");
  std::vector<MetricsReport> out;
  for (auto s : order) out.push_back(report_from_jsonl(by_seed[s]));
  return out;
}

int cmd_report(const Options& o, std::ostream& out) {
  if (o.report_inputs.empty()) throw ConfigError("report needs at least one --input");
  std::vector<SeedSummary> summaries;
  for (const auto& p : o.report_inputs) summaries.push_back(summarize_seeds(load_reports(p)));

  std::vector<std::string> metrics;
  if (o.metric == "all") {
    metrics.assign(std::begin(kTableMetrics), std::end(kTableMetrics));
  } else {
    metrics.push_back(o.metric);
  }
  for (const auto& m : metrics) out << render_summary_table(summaries, m) << '\n';

  const bool compare = !o.baseline_label.empty() || !o.treated_label.empty();
  if (!compare) {
    if (o.min_pass_gain || o.min_step_gain) throw ConfigError("thresholds need --baseline-label and --treated-label");
    return kExitOk;
  }
  auto find = [&](const std::string& label) -> const SeedSummary& {
    for (const auto& s : summaries) {
      if (s.model == label) return s;
    }
    throw ConfigError("no report for model '" + label + "'");
  };
  const SeedSummary& base = find(o.baseline_label);
  const SeedSummary& treated = find(o.treated_label);
  auto avg = [](const SeedSummary& s, const char* metric) -> std::optional<double> {
    auto m = s.cells.find(metric);
    if (m == s.cells.end()) return std::nullopt;
    auto it = m->second.find("Avg");
    if (it == m->second.end()) return std::nullopt;
    return it->second.mean;
  };
  int code = kExitOk;
  const double gain = rate_improvement_points(*avg(base, "pass_rate"), *avg(treated, "pass_rate"));
  out << "pass rate: " << o.baseline_label << " -> " << o.treated_label << ": " << gain << " points\n";
  if (o.min_pass_gain && !(gain >= *o.min_pass_gain)) {
    out << "FAIL: pass-rate gain below " << *o.min_pass_gain << " points\n";
    code = kExitThreshold;
  }
  const auto sb = avg(base, "avg_steps");
  const auto st = avg(treated, "avg_steps");
  if (sb && st) {
    const double imp = step_improvement_pct(*sb, *st);
    out << "avg steps: " << *sb << " -> " << *st << ": " << imp << "% fewer\n";
    if (o.min_step_gain && !(imp >= *o.min_step_gain)) {
      out << "FAIL: step improvement below " << *o.min_step_gain << "%\n";
      code = kExitThreshold;
    }
  } else if (o.min_step_gain) {
    out << "FAIL: no step measurements to compare\n";
    code = kExitThreshold;
  }
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"toolpref: tool-use trajectory preference lab"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("-c,--config", o.config_path, "run config (JSON)");
  app.add_option("-s,--set", o.overrides, "override a config key, e.g. train.beta=0.3")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  app.add_option("-j,--jobs", o.jobs, "worker threads for rollouts");

  auto* gen = app.add_subcommand("gen-world", "generate the synthetic tool world");
  auto* annotate = app.add_subcommand("annotate", "grow expert decision trees for the training tasks");
  auto* forge = app.add_subcommand("forge", "build preference and SFT datasets from the trees");
  forge->add_option("-g,--granularity", o.granularity, "step | path (default from config)");
  auto* train = app.add_subcommand("train", "train the policy");
  train->add_option("--stage", o.stage, "sft | dpo | both")->check(CLI::IsMember({"sft", "dpo", "both"}));
  auto* rollout = app.add_subcommand("rollout", "run DFSDT on every test task");
  rollout->add_option("--checkpoint", o.checkpoint, "policy checkpoint")->required();
  rollout->add_option("--label", o.label, "output name");
  rollout->add_option("--seed", o.seed, "rollout seed");
  auto* eval = app.add_subcommand("eval", "score a policy on the test scenarios");
  eval->add_option("--checkpoint", o.checkpoint, "policy checkpoint");
  eval->add_option("--rollouts", o.rollouts_in, "stored rollouts instead of a checkpoint");
  eval->add_option("--baseline", o.baseline_checkpoint, "baseline checkpoint for win rate");
  eval->add_option("--baseline-rollouts", o.baseline_rollouts_in, "stored baseline rollouts");
  eval->add_option("--label", o.label, "model name in the report");
  eval->add_option("--seed", o.seed, "rollout seed");
  eval->add_option("--seeds", o.seeds, "several rollout seeds")->delimiter(',');
  eval->add_flag("--multi-seed", o.multi_seed, "use eval_seeds from the config");
  eval->add_flag("--pass-only-steps", o.pass_only_steps, "average steps over Pass results only");
  eval->add_option("--judge", o.judge, "oracle | keyword");
  eval->add_option("--min-pass-rate", o.min_pass_rate, "exit 3 when the average pass rate is lower");
  auto* report = app.add_subcommand("report", "tabulate reports and check thresholds");
  report->add_option("-i,--input", o.report_inputs, "report files")->required();
  report->add_option("--metric", o.metric, "pass_rate | pass_rate_v2 | win_rate | avg_steps | all");
  report->add_option("--baseline-label", o.baseline_label);
  report->add_option("--treated-label", o.treated_label);
  report->add_option("--min-pass-gain", o.min_pass_gain, "points");
  report->add_option("--min-step-gain", o.min_step_gain, "percent");

  std::vector<std::string> argv_store{"toolpref"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (report->parsed()) return cmd_report(o, out);
    const RunConfig c = build_config(o);
    if (gen->parsed()) return cmd_gen_world(c, out);
    if (annotate->parsed()) return cmd_annotate(c, out);
    if (forge->parsed()) return cmd_forge(c, o, out);
    if (train->parsed()) return cmd_train(c, o, out);
    if (rollout->parsed()) return cmd_rollout(c, o, out);
    if (eval->parsed()) return cmd_eval(c, o, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace toolpref
