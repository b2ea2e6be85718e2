#include "toolpref/policy/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "toolpref/random.hpp"

namespace toolpref {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Splits on '.' outside double quotes.
std::vector<std::string> sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : text) {
    if (c == '"') quoted = !quoted;
    if (c == '.' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

std::optional<QueryClause> parse_sentence(const std::string& sentence) {
  std::string s = sentence;
  if (lower(s.substr(0, 5)) == "then ") s = s.substr(5);
  const auto the = lower(s).find(" the ");
  if (the == std::string::npos) return std::nullopt;
  QueryClause c;
  c.verb = lower(trim(s.substr(0, the)));
  std::string rest = s.substr(the + 5);

  auto next_word = [&rest]() {
    rest = trim(rest);
    const auto sp = rest.find(' ');
    std::string w = rest.substr(0, sp);
    rest = sp == std::string::npos ? std::string() : rest.substr(sp + 1);
    return w;
  };
  c.noun = lower(next_word());
  if (c.noun.empty()) return std::nullopt;
  std::string w = next_word();
  if (w == "on") {
    c.provider = next_word();
    w = next_word();
  }
  if (w != "for") return std::nullopt;
  rest = trim(rest);
  if (!rest.empty() && rest.front() == '"') {
    const auto end = rest.find('"', 1);
    if (end == std::string::npos) return std::nullopt;
    c.value = rest.substr(1, end - 1);
    return c;
  }
  if (next_word() != "the") return std::nullopt;
  c.ref_noun = lower(next_word());
  if (next_word() != "reference") return std::nullopt;
  return c;
}

bool contains_action(const std::vector<ApiAction>& v, const ApiAction& a) {
  return std::find(v.begin(), v.end(), a) != v.end();
}

}  // namespace

const std::array<const char*, kFeatureDim>& feature_names() {
  static const std::array<const char*, kFeatureDim> names = {
      "noun_match",         "verb_match",         "provider_match",  "type_ok",
      "missing_arg",        "clause_resolved",    "repeat_failed",   "tool_failed_before",
      "repeat_ok",          "answer_coverage",    "answer_ready",    "answer_nothing",
      "giveup_after_error", "giveup_depth",       "finish_answer",   "finish_give_up"};
  return names;
}

std::uint64_t feature_schema_hash() {
  std::uint64_t h = fnv1a("toolpref-features");
  h = hash_combine(h, static_cast<std::uint64_t>(kFeatureDim));
  for (const char* n : feature_names()) h = hash_combine(h, std::string_view(n));
  return h;
}

std::vector<QueryClause> parse_query_clauses(const std::string& query) {
  std::vector<QueryClause> out;
  for (const auto& s : sentences(query)) {
    if (auto c = parse_sentence(s)) out.push_back(std::move(*c));
  }
  return out;
}

FeatureContext::FeatureContext(const World& world, std::string instruction)
    : world_(&world), instruction_(std::move(instruction)), clauses_(parse_query_clauses(instruction_)) {}

FeatureContext::StateInfo FeatureContext::analyze(const std::vector<HistoryStep>& history) const {
  StateInfo info;
  info.depth = history.size();
  info.clause_values.resize(clauses_.size());
  info.covered.assign(clauses_.size(), false);
  for (std::size_t i = 0; i < clauses_.size(); ++i) {
    const QueryClause& c = clauses_[i];
    if (c.value) {
      info.clause_values[i] = c.value;
      continue;
    }
    // Reference clause: the value shows up in the response of a call on a tool with that noun.
    for (const auto& step : history) {
      const ToolSpec* t = world_->find_tool(step.action.tool_name);
      if (!t || t->noun != *c.ref_noun) continue;
      auto revealed = revealed_values(step.response);
      if (!revealed.empty()) {
        info.clause_values[i] = revealed.front();
        break;
      }
    }
  }
  for (const auto& step : history) {
    if (step.response.ok()) {
      info.ok_actions.push_back(step.action);
      if (has_results(step.response)) {
        for (std::size_t i = 0; i < clauses_.size(); ++i) {
          if (info.covered[i] || !info.clause_values[i]) continue;
          for (const auto& [k, v] : step.action.arguments) {
            if (v == *info.clause_values[i]) info.covered[i] = true;
          }
        }
      }
    } else {
      info.failed_actions.push_back(step.action);
      if (std::find(info.failed_tools.begin(), info.failed_tools.end(), step.action.tool_name) ==
          info.failed_tools.end()) {
        info.failed_tools.push_back(step.action.tool_name);
      }
    }
  }
  info.n_covered = static_cast<std::size_t>(std::count(info.covered.begin(), info.covered.end(), true));
  info.last_error = !history.empty() && !history.back().response.ok();
  return info;
}

std::optional<std::size_t> FeatureContext::bind_clause(const StateInfo& info, const ToolSpec& tool,
                                                       const ApiAction& action) const {
  if (!action.arguments.empty()) {
    const std::string& v = action.arguments.front().second;
    for (std::size_t i = 0; i < clauses_.size(); ++i) {
      if (info.clause_values[i] && *info.clause_values[i] == v) return i;
    }
    return std::nullopt;
  }
  std::optional<std::size_t> any;
  for (std::size_t i = 0; i < clauses_.size(); ++i) {
    if (clauses_[i].noun != tool.noun) continue;
    if (!info.covered[i]) return i;
    if (!any) any = i;
  }
  return any;
}

FeatureVector FeatureContext::featurize(const StateInfo& info, const Decision& d) const {
  FeatureVector phi{};
  switch (d.kind) {
    case NodeKind::FinishAnswer: {
      const double coverage =
          clauses_.empty() ? 0.0 : static_cast<double>(info.n_covered) / static_cast<double>(clauses_.size());
      phi[kAnswerCoverage] = coverage;
      phi[kAnswerReady] = !clauses_.empty() && info.n_covered == clauses_.size() ? 1.0 : 0.0;
      phi[kAnswerNothing] = info.n_covered == 0 ? 1.0 : 0.0;
      phi[kFinishAnswerBias] = 1.0;
      return phi;
    }
    case NodeKind::FinishGiveUp:
      phi[kGiveUpAfterError] = info.last_error ? 1.0 : 0.0;
      phi[kGiveUpDepth] = std::min(1.0, static_cast<double>(info.depth) / 6.0);
      phi[kFinishGiveUpBias] = 1.0;
      return phi;
    case NodeKind::Root: return phi;
    case NodeKind::Call: break;
  }

  const ApiAction& a = d.action;
  const ToolSpec* tool = world_->find_tool(a.tool_name);
  phi[kMissingArg] = a.arguments.empty() ? 1.0 : 0.0;
  phi[kRepeatFailed] = contains_action(info.failed_actions, a) ? 1.0 : 0.0;
  phi[kToolFailedBefore] =
      std::find(info.failed_tools.begin(), info.failed_tools.end(), a.tool_name) != info.failed_tools.end() ? 1.0
                                                                                                              : 0.0;
  phi[kRepeatOk] = contains_action(info.ok_actions, a) ? 1.0 : 0.0;
  if (!tool) return phi;

  const auto bound = bind_clause(info, *tool, a);
  if (!bound) return phi;
  // Matching features describe how well the call serves a request that is still open.
  if (info.covered[*bound]) {
    phi[kClauseResolved] = 1.0;
    return phi;
  }
  const QueryClause& c = clauses_[*bound];
  if (!a.arguments.empty() && !tool->required.empty()) {
    phi[kTypeOk] = infer_value_type(a.arguments.front().second) == tool->required.front().type ? 1.0 : 0.0;
  }
  phi[kNounMatch] = c.noun == tool->noun ? 1.0 : 0.0;
  const auto& syn = verb_synonyms(tool->verb);
  phi[kVerbMatch] = c.verb == tool->verb || std::find(syn.begin(), syn.end(), c.verb) != syn.end() ? 1.0 : 0.0;
  if (c.provider) phi[kProviderMatch] = *c.provider == tool->provider ? 1.0 : -1.0;
  return phi;
}

std::vector<FeatureVector> FeatureContext::featurize_all(const std::vector<HistoryStep>& history,
                                                         const std::vector<Decision>& decisions) const {
  const StateInfo info = analyze(history);
  std::vector<FeatureVector> out;
  out.reserve(decisions.size());
  for (const auto& d : decisions) out.push_back(featurize(info, d));
  return out;
}

FeatureVector featurize(const FeatureContext& ctx, const ReasoningState& state, const Decision& decision) {
  return ctx.featurize(ctx.analyze(state.history), decision);
}

}  // namespace toolpref
