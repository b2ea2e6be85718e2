#include "toolpref/forge/forge.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <tuple>

#include "toolpref/errors.hpp"
#include "toolpref/random.hpp"
#include "toolpref/trajectory/tree_io.hpp"

namespace toolpref {

const char* to_string(Granularity g) { return g == Granularity::StepWise ? "step" : "path"; }

Granularity granularity_from_string(const std::string& s) {
  if (s == "step" || s == "stepwise" || s == "step-wise") return Granularity::StepWise;
  if (s == "path" || s == "pathwise" || s == "path-wise") return Granularity::PathWise;
  throw ConfigError("unknown granularity '" + s + "' (expected step or path)");
}

namespace {

std::vector<PairStep> payload(const DecisionTree& tree, const std::vector<NodeId>& path, std::size_t from) {
  std::vector<PairStep> out;
  for (std::size_t i = from; i < path.size(); ++i) {
    const TreeNode& n = tree.node(path[i]);
    out.push_back(PairStep{n.id, *n.decision(), n.response});
  }
  return out;
}

PreferencePair make_pair(const DecisionTree& tree, Granularity g, NodeId branch, std::vector<NodeId> win,
                         std::vector<NodeId> lose) {
  PreferencePair p;
  p.instruction = tree.instruction();
  // History through the branch node = state in which its children were chosen.
  p.context_history = state_at(tree, win.at(path_to(tree, branch).size())).history;
  p.branch_node = branch;
  const std::size_t from = path_to(tree, branch).size();
  p.preferred = payload(tree, win, from);
  p.dispreferred = payload(tree, lose, from);
  p.preferred_path = std::move(win);
  p.dispreferred_path = std::move(lose);
  p.granularity = g;
  p.source_tree = tree.tree_id();
  return p;
}

std::size_t child_rank(const TreeNode& n, NodeId child) {
  return static_cast<std::size_t>(std::find(n.children.begin(), n.children.end(), child) - n.children.begin());
}

void render_step(std::ostringstream& out, const Decision& d, const std::optional<ApiResponse>& r) {
  out << "Action: " << d.to_string() << '\n';
  if (r) out << "Observation (" << (r->ok() ? "ok" : "error") << "): " << r->payload << '\n';
}

}  // namespace

std::vector<PreferencePair> extract_stepwise(const DecisionTree& tree) {
  // (branch, preferred child, dispreferred child), keyed for ordering and dedup.
  std::set<std::tuple<NodeId, std::size_t, std::size_t>> keys;
  for (const Path& p : success_paths(tree)) {
    for (std::size_t i = 0; i + 1 < p.node_ids.size(); ++i) {
      const TreeNode& n = tree.node(p.node_ids[i]);
      if (n.children.size() < 2) continue;
      const NodeId win = p.node_ids[i + 1];
      for (NodeId c : n.children) {
        if (c == win || tree.subtree_has_success(c)) continue;
        keys.emplace(n.id, child_rank(n, win), child_rank(n, c));
      }
    }
  }
  std::vector<PreferencePair> out;
  for (const auto& [branch, wi, li] : keys) {
    const TreeNode& n = tree.node(branch);
    auto base = path_to(tree, branch);
    auto win = base;
    win.push_back(n.children[wi]);
    auto lose = base;
    lose.push_back(n.children[li]);
    out.push_back(make_pair(tree, Granularity::StepWise, branch, std::move(win), std::move(lose)));
  }
  return out;
}

std::vector<PreferencePair> extract_pathwise(const DecisionTree& tree) {
  std::vector<PreferencePair> out;
  const auto fails = failure_paths(tree);
  for (const Path& s : success_paths(tree)) {
    for (const Path& f : fails) {
      std::size_t k = 0;
      while (k < s.node_ids.size() && k < f.node_ids.size() && s.node_ids[k] == f.node_ids[k]) ++k;
      out.push_back(make_pair(tree, Granularity::PathWise, s.node_ids[k - 1], s.node_ids, f.node_ids));
    }
  }
  return out;
}

std::vector<PreferencePair> extract_pairs(const DecisionTree& tree, Granularity g) {
  return g == Granularity::StepWise ? extract_stepwise(tree) : extract_pathwise(tree);
}

ApiDocs api_docs_from_world(const World& world) {
  ApiDocs docs;
  for (const auto& t : world.tools()) {
    std::ostringstream out;
    out << t.name << ": " << t.description << " Required:";
    for (const auto& p : t.required) out << ' ' << p.name << " (" << to_string(p.type) << ')';
    if (!t.optional.empty()) {
      out << ". Optional:";
      for (const auto& p : t.optional) out << ' ' << p.name << " (" << to_string(p.type) << ')';
    }
    out << '.';
    docs[t.name] = out.str();
  }
  return docs;
}

std::string FormattedSample::bytes() const {
  std::string s;
  for (const std::string* part : {&instruction_block, &input_block, &output_preferred, &output_dispreferred}) {
    s += std::to_string(part->size());
    s += ':';
    s += *part;
  }
  return s;
}

FormattedSample format_sample(const PreferencePair& pair, const ApiDocs& docs) {
  std::set<std::string> tools;
  for (const auto& h : pair.context_history) tools.insert(h.action.tool_name);
  for (const auto* side : {&pair.preferred, &pair.dispreferred}) {
    for (const auto& s : *side) {
      if (s.decision.is_call()) tools.insert(s.decision.action.tool_name);
    }
  }

  std::ostringstream ins;
  ins << "You are an agent that solves the query by calling tools, searching a decision tree depth-first. "
         "Call Finish with return_type=give_answer to answer, or give_up_and_restart to abandon this branch.\n"
         "Tools:\n";
  for (const auto& t : tools) {
    auto it = docs.find(t);
    if (it == docs.end()) throw MissingDoc("no documentation for tool '" + t + "'");
    ins << "- " << it->second << '\n';
  }

  std::ostringstream in;
  in << "Query: " << pair.instruction << "\nHistory:";
  if (pair.context_history.empty()) in << " (none)";
  in << '\n';
  for (const auto& h : pair.context_history) render_step(in, Decision::call(h.action), h.response);

  auto render = [](const std::vector<PairStep>& steps) {
    std::ostringstream out;
    for (const auto& s : steps) render_step(out, s.decision, s.response);
    return out.str();
  };
  return FormattedSample{ins.str(), in.str(), render(pair.preferred), render(pair.dispreferred)};
}

std::vector<DecisionTree> qualifying_trees(const std::vector<DecisionTree>& trees) {
  std::vector<DecisionTree> out;
  for (const auto& t : trees) {
    if (has_failed_branch(t)) out.push_back(scrub_diversity_prompts(t));
  }
  return out;
}

PreferenceCorpus build_corpus(const std::vector<DecisionTree>& trees, Granularity g, const ApiDocs& docs) {
  PreferenceCorpus corpus;
  std::set<std::string> seen;
  corpus.stats.trees_in = trees.size();
  for (const auto& raw : trees) {
    TreeStats ts;
    ts.tree_id = raw.tree_id();
    ts.kept = has_failed_branch(raw);
    if (ts.kept) {
      ++corpus.stats.trees_kept;
      const DecisionTree tree = scrub_diversity_prompts(raw);
      for (auto& pair : extract_pairs(tree, g)) {
        ++ts.extracted;
        FormattedSample sample = format_sample(pair, docs);
        if (!seen.insert(sample.bytes()).second) {
          ++corpus.stats.duplicates_dropped;
          continue;
        }
        ++ts.emitted;
        corpus.records.push_back(PreferenceRecord{std::move(pair), std::move(sample)});
      }
    }
    corpus.stats.pairs_extracted += ts.extracted;
    corpus.stats.pairs_emitted += ts.emitted;
    corpus.stats.per_tree.push_back(std::move(ts));
  }
  return corpus;
}

std::vector<SftExample> sft_examples(const DecisionTree& tree) {
  std::vector<SftExample> out;
  std::set<NodeId> done;
  for (const Path& p : success_paths(tree)) {
    for (std::size_t i = 1; i < p.node_ids.size(); ++i) {
      const NodeId id = p.node_ids[i];
      if (!done.insert(id).second) continue;
      out.push_back(SftExample{tree.instruction(), state_at(tree, id), *tree.node(id).decision(), tree.tree_id(), id});
    }
  }
  return out;
}

std::vector<SftExample> resample_sft_set(const std::vector<DecisionTree>& trees, std::size_t n_instructions,
                                         std::uint64_t seed) {
  if (trees.size() < n_instructions) {
    throw InsufficientData("asked for " + std::to_string(n_instructions) + " instructions, only " +
                           std::to_string(trees.size()) + " qualifying trees");
  }
  std::vector<std::size_t> order(trees.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(hash_combine(seed, "sft-sample"));
  shuffle_in_place(order, rng);
  order.resize(n_instructions);
  std::sort(order.begin(), order.end());
  std::vector<SftExample> out;
  for (std::size_t i : order) {
    for (auto& e : sft_examples(scrub_diversity_prompts(trees[i]))) out.push_back(std::move(e));
  }
  return out;
}

std::vector<PreferenceRecord> sample_pairs_by_instruction(const std::vector<PreferenceRecord>& records,
                                                          std::size_t n_pairs, std::uint64_t seed) {
  std::vector<std::string> sources;
  std::map<std::string, std::vector<std::size_t>> by_source;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& v = by_source[records[i].pair.source_tree];
    if (v.empty()) sources.push_back(records[i].pair.source_tree);
    v.push_back(i);
  }
  Rng rng(hash_combine(seed, "dpo-sample"));
  shuffle_in_place(sources, rng);
  std::vector<std::size_t> picked;
  for (const auto& s : sources) {
    if (picked.size() >= n_pairs) break;
    const auto& v = by_source[s];
    picked.insert(picked.end(), v.begin(), v.end());
  }
  std::sort(picked.begin(), picked.end());
  std::vector<PreferenceRecord> out;
  for (std::size_t i : picked) out.push_back(records[i]);
  return out;
}

Json preference_record_to_json(const PreferenceRecord& r) {
  Json j;
  j["instruction"] = r.sample.instruction_block;
  j["input"] = r.sample.input_block;
  j["output"] = Json{{"preferred", r.sample.output_preferred}, {"dispreferred", r.sample.output_dispreferred}};
  j["granularity"] = to_string(r.pair.granularity);
  j["source_tree"] = r.pair.source_tree;
  j["branch_node"] = r.pair.branch_node;
  j["preferred_path"] = r.pair.preferred_path;
  j["dispreferred_path"] = r.pair.dispreferred_path;
  return j;
}

Json sft_example_to_json(const SftExample& e, const ApiDocs& docs) {
  PreferencePair p;
  p.instruction = e.instruction;
  p.context_history = e.state.history;
  p.preferred.push_back(PairStep{e.node, e.target, std::nullopt});
  const FormattedSample s = format_sample(p, docs);
  Json j;
  j["instruction"] = s.instruction_block;
  j["input"] = s.input_block;
  j["target"] = e.target.to_string();
  j["source_tree"] = e.source_tree;
  j["node"] = e.node;
  return j;
}

Json corpus_stats_to_json(const CorpusStats& s) {
  Json per = Json::array();
  for (const auto& t : s.per_tree) {
    per.push_back(Json{{"tree_id", t.tree_id}, {"kept", t.kept}, {"extracted", t.extracted}, {"emitted", t.emitted}});
  }
  return Json{{"trees_in", s.trees_in},
              {"trees_kept", s.trees_kept},
              {"pairs_extracted", s.pairs_extracted},
              {"duplicates_dropped", s.duplicates_dropped},
              {"pairs_emitted", s.pairs_emitted},
              {"per_tree", std::move(per)}};
}

}  // namespace toolpref
