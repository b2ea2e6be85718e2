#include "toolpref/eval/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "toolpref/errors.hpp"

namespace toolpref {

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::PreferA: return "prefer_a";
    case Verdict::PreferB: return "prefer_b";
    case Verdict::Tie: return "tie";
  }
  return "?";
}

namespace {

std::optional<NodeId> answer_node(const DecisionTree& tree) {
  for (NodeId id : tree.document_order()) {
    if (tree.node(id).kind == NodeKind::FinishAnswer) return id;
  }
  return std::nullopt;
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(precision) << v;
  return o.str();
}

}  // namespace

double OracleJudge::answer_credit(const RolloutResult& r) const {
  if (r.outcome != RolloutOutcome::Pass) return 0.0;
  auto id = answer_node(r.tree);
  if (!id) return 0.0;
  const Task& task = world_.task(r.task_id);
  return goal_state(world_, task, state_at(r.tree, *id).history).partial_credit;
}

JudgeVerdict OracleJudge::compare(const RolloutResult& a, const RolloutResult& b) const {
  const double ca = answer_credit(a);
  const double cb = answer_credit(b);
  if (ca > cb) return {Verdict::PreferA, "covers more sub-goals (" + fmt(ca) + " vs " + fmt(cb) + ")"};
  if (cb > ca) return {Verdict::PreferB, "covers more sub-goals (" + fmt(cb) + " vs " + fmt(ca) + ")"};
  if (a.actions_used < b.actions_used) {
    return {Verdict::PreferA, "same coverage, fewer actions (" + std::to_string(a.actions_used) + ")"};
  }
  if (b.actions_used < a.actions_used) {
    return {Verdict::PreferB, "same coverage, fewer actions (" + std::to_string(b.actions_used) + ")"};
  }
  return {Verdict::Tie, "same coverage and actions"};
}

bool passes_keyword_filter(const RolloutResult& r, const std::vector<std::string>& keywords) {
  return r.outcome == RolloutOutcome::Pass && r.final_answer && !contains_keyword(*r.final_answer, keywords);
}

JudgeVerdict KeywordJudge::compare(const RolloutResult& a, const RolloutResult& b) const {
  const bool pa = passes_keyword_filter(a, keywords_);
  const bool pb = passes_keyword_filter(b, keywords_);
  if (pa && !pb) return {Verdict::PreferA, "only A gives a clean answer"};
  if (pb && !pa) return {Verdict::PreferB, "only B gives a clean answer"};
  return {Verdict::Tie, pa ? "both answer cleanly" : "neither answers cleanly"};
}

double pass_rate(const std::vector<RolloutResult>& results, const std::vector<std::string>& keywords) {
  if (results.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& r : results) n += passes_keyword_filter(r, keywords) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(results.size());
}

bool passes_v2(const RolloutResult& r, const World& world) {
  if (r.outcome != RolloutOutcome::Pass) return false;
  auto id = answer_node(r.tree);
  if (!id) return false;
  const Task& task = world.task(r.task_id);
  if (goal_state(world, task, state_at(r.tree, *id).history).all_satisfied) return true;
  return !task.solvable;
}

double pass_rate_v2(const std::vector<RolloutResult>& results, const World& world) {
  if (results.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& r : results) n += passes_v2(r, world) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(results.size());
}

double win_rate(const std::vector<RolloutResult>& a, const std::vector<RolloutResult>& b, const Judge& judge) {
  std::map<std::string, const RolloutResult*> by_task;
  for (const auto& r : b) {
    if (!by_task.emplace(r.task_id, &r).second) throw UnpairedTask("task '" + r.task_id + "' appears twice in B");
  }
  if (a.size() != b.size()) throw UnpairedTask("result sets differ in size");
  if (a.empty()) throw UnpairedTask("no results to pair");
  std::set<std::string> seen;
  double score = 0.0;
  for (const auto& ra : a) {
    if (!seen.insert(ra.task_id).second) throw UnpairedTask("task '" + ra.task_id + "' appears twice in A");
    auto it = by_task.find(ra.task_id);
    if (it == by_task.end()) throw UnpairedTask("task '" + ra.task_id + "' has no counterpart");
    const Verdict v = judge.compare(ra, *it->second).verdict;
    score += v == Verdict::PreferA ? 1.0 : v == Verdict::Tie ? 0.5 : 0.0;
  }
  return score / static_cast<double>(a.size());
}

std::optional<double> try_avg_steps(const std::vector<RolloutResult>& results, StepsScope scope) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : results) {
    const bool ok = r.outcome == RolloutOutcome::Pass ||
                    (scope == StepsScope::PassAndGiveUp && r.outcome == RolloutOutcome::GiveUp);
    if (!ok) continue;
    sum += r.actions_used;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

double avg_steps(const std::vector<RolloutResult>& results, StepsScope scope) {
  auto v = try_avg_steps(results, scope);
  if (!v) throw NoQualifyingSamples("no Finish-terminated results to average");
  return *v;
}

double step_improvement_pct(double baseline, double treated) {
  if (!(baseline > 0.0)) throw ZeroBaseline("step baseline must be positive");
  return (baseline - treated) / baseline * 100.0;
}

double rate_improvement_points(double baseline, double treated) { return (treated - baseline) * 100.0; }

namespace {

std::size_t count_steps(const std::vector<RolloutResult>& results, StepsScope scope) {
  std::size_t n = 0;
  for (const auto& r : results) {
    if (r.outcome == RolloutOutcome::Pass || (scope == StepsScope::PassAndGiveUp && r.outcome == RolloutOutcome::GiveUp)) {
      ++n;
    }
  }
  return n;
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& x : xs) {
    if (!x) continue;
    sum += *x;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace

MetricsReport evaluate(const std::string& model, const World& world, const std::vector<RolloutResult>& results,
                       const EvalOptions& options, const std::vector<RolloutResult>* baseline, const Judge* judge) {
  if (baseline && !judge) throw Error("a baseline needs a judge");
  std::map<Scenario, std::vector<RolloutResult>> groups;
  std::map<Scenario, std::vector<RolloutResult>> base_groups;
  for (const auto& r : results) {
    const Task& t = world.task(r.task_id);
    if (!t.scenario) throw UnknownTask("task '" + r.task_id + "' is not in a test scenario");
    groups[*t.scenario].push_back(r);
  }
  if (baseline) {
    for (const auto& r : *baseline) {
      const Task& t = world.task(r.task_id);
      if (!t.scenario) throw UnknownTask("task '" + r.task_id + "' is not in a test scenario");
      base_groups[*t.scenario].push_back(r);
    }
  }

  MetricsReport rep;
  rep.model = model;
  if (judge && baseline) rep.judge = judge->name();
  std::vector<std::optional<double>> wins;
  std::vector<std::optional<double>> steps;
  double p1 = 0.0;
  double p2 = 0.0;
  for (Scenario s : kAllScenarios) {
    auto it = groups.find(s);
    if (it == groups.end()) continue;
    const auto& rs = it->second;
    MetricsCell c;
    c.scenario = to_string(s);
    c.n = rs.size();
    c.pass_rate = pass_rate(rs, options.keywords);
    c.pass_rate_v2 = pass_rate_v2(rs, world);
    c.avg_steps = try_avg_steps(rs, options.steps_scope);
    c.n_steps = count_steps(rs, options.steps_scope);
    if (baseline) {
      auto bt = base_groups.find(s);
      if (bt == base_groups.end()) throw UnpairedTask(std::string("baseline has no results for ") + to_string(s));
      c.win_rate = win_rate(rs, bt->second, *judge);
    }
    p1 += c.pass_rate;
    p2 += c.pass_rate_v2;
    wins.push_back(c.win_rate);
    steps.push_back(c.avg_steps);
    rep.average.n += c.n;
    rep.average.n_steps += c.n_steps;
    rep.scenarios.push_back(std::move(c));
  }
  if (baseline && base_groups.size() != groups.size()) throw UnpairedTask("baseline covers other scenarios");
  rep.average.scenario = "Avg";
  if (!rep.scenarios.empty()) {
    const double k = static_cast<double>(rep.scenarios.size());
    rep.average.pass_rate = p1 / k;
    rep.average.pass_rate_v2 = p2 / k;
    rep.average.win_rate = mean_of(wins);
    rep.average.avg_steps = mean_of(steps);
  }
  return rep;
}

Json metrics_cell_to_json(const MetricsCell& c) {
  Json j;
  j["scenario"] = c.scenario;
  j["n"] = c.n;
  j["pass_rate"] = c.pass_rate;
  j["pass_rate_v2"] = c.pass_rate_v2;
  j["win_rate"] = c.win_rate ? Json(*c.win_rate) : Json(nullptr);
  j["avg_steps"] = c.avg_steps ? Json(*c.avg_steps) : Json(nullptr);
  j["n_steps"] = c.n_steps;
  return j;
}

MetricsCell metrics_cell_from_json(const Json& j) {
  try {
    MetricsCell c;
    c.scenario = j.at("scenario").get<std::string>();
    c.n = j.at("n").get<std::size_t>();
    c.pass_rate = j.at("pass_rate").get<double>();
    c.pass_rate_v2 = j.at("pass_rate_v2").get<double>();
    if (!j.at("win_rate").is_null()) c.win_rate = j.at("win_rate").get<double>();
    if (!j.at("avg_steps").is_null()) c.avg_steps = j.at("avg_steps").get<double>();
    c.n_steps = j.value("n_steps", std::size_t{0});
    return c;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("metrics record: ") + e.what());
  }
}

std::string report_to_jsonl(const MetricsReport& r, const Json& meta) {
  std::ostringstream out;
  auto line = [&](const MetricsCell& c) {
    Json j;
    j["model"] = r.model;
    j["judge"] = r.judge;
    const Json cell = metrics_cell_to_json(c);
    for (auto& [k, v] : cell.items()) j[k] = v;
    for (auto& [k, v] : meta.items()) j[k] = v;
    out << j.dump() << '\n';
  };
  for (const auto& c : r.scenarios) line(c);
  line(r.average);
  return out.str();
}

MetricsReport report_from_jsonl(const std::string& text) {
  MetricsReport r;
  std::istringstream in(text);
  std::string l;
  bool have_avg = false;
  while (std::getline(in, l)) {
    if (l.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(l);
    } catch (const Json::parse_error& e) {
      throw SchemaError(std::string("metrics line: ") + e.what());
    }
    r.model = j.value("model", "");
    r.judge = j.value("judge", "");
    MetricsCell c = metrics_cell_from_json(j);
    if (c.scenario == "Avg") {
      r.average = std::move(c);
      have_avg = true;
    } else {
      r.scenarios.push_back(std::move(c));
    }
  }
  if (!have_avg) throw SchemaError("metrics report has no Avg line");
  return r;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd m;
  m.n = values.size();
  if (values.empty()) return m;
  double sum = 0.0;
  for (double v : values) sum += v;
  m.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

namespace {

const char* const kMetrics[] = {"pass_rate", "pass_rate_v2", "win_rate", "avg_steps"};

std::optional<double> metric_of(const MetricsCell& c, const std::string& metric) {
  if (metric == "pass_rate") return c.pass_rate;
  if (metric == "pass_rate_v2") return c.pass_rate_v2;
  if (metric == "win_rate") return c.win_rate;
  if (metric == "avg_steps") return c.avg_steps;
  throw Error("unknown metric '" + metric + "'");
}

std::vector<const MetricsCell*> cells_with_avg(const MetricsReport& r) {
  std::vector<const MetricsCell*> out;
  for (const auto& c : r.scenarios) out.push_back(&c);
  out.push_back(&r.average);
  return out;
}

std::string aligned(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i == 0) {
        out << std::left << std::setw(static_cast<int>(width[i])) << row[i];
      } else {
        out << "  " << std::right << std::setw(static_cast<int>(width[i])) << row[i];
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace

SeedSummary summarize_seeds(const std::vector<MetricsReport>& per_seed) {
  SeedSummary s;
  if (per_seed.empty()) return s;
  s.model = per_seed.front().model;
  for (const auto* c : cells_with_avg(per_seed.front())) s.scenarios.push_back(c->scenario);
  for (const char* metric : kMetrics) {
    for (const auto& name : s.scenarios) {
      std::vector<double> vals;
      for (const auto& r : per_seed) {
        for (const auto* c : cells_with_avg(r)) {
          if (c->scenario != name) continue;
          if (auto v = metric_of(*c, metric)) vals.push_back(*v);
        }
      }
      if (!vals.empty()) s.cells[metric][name] = mean_std(vals);
    }
  }
  return s;
}

Json seed_summary_to_json(const SeedSummary& s) {
  Json j;
  j["model"] = s.model;
  Json cells = Json::object();
  for (const auto& [metric, by_scenario] : s.cells) {
    Json m = Json::object();
    for (const auto& name : s.scenarios) {
      auto it = by_scenario.find(name);
      if (it == by_scenario.end()) continue;
      m[name] = Json{{"mean", it->second.mean}, {"stddev", it->second.stddev}, {"n", it->second.n}};
    }
    cells[metric] = std::move(m);
  }
  j["cells"] = std::move(cells);
  return j;
}

std::string render_table(const std::vector<MetricsReport>& reports, const std::string& metric) {
  std::vector<std::vector<std::string>> rows;
  if (reports.empty()) return {};
  std::vector<std::string> header{metric};
  for (const auto* c : cells_with_avg(reports.front())) header.push_back(c->scenario);
  rows.push_back(header);
  const int precision = metric == "avg_steps" ? 2 : 3;
  for (const auto& r : reports) {
    std::vector<std::string> row{r.model};
    for (const auto* c : cells_with_avg(r)) {
      auto v = metric_of(*c, metric);
      row.push_back(v ? fmt(*v, precision) : "-");
    }
    rows.push_back(std::move(row));
  }
  return aligned(rows);
}

std::string render_summary_table(const std::vector<SeedSummary>& summaries, const std::string& metric) {
  if (summaries.empty()) return {};
  (void)metric_of(MetricsCell{}, metric);  // validates the name
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{metric};
  for (const auto& name : summaries.front().scenarios) header.push_back(name);
  rows.push_back(header);
  const int precision = metric == "avg_steps" ? 2 : 3;
  for (const auto& s : summaries) {
    std::vector<std::string> row{s.model};
    auto m = s.cells.find(metric);
    for (const auto& name : summaries.front().scenarios) {
      if (m == s.cells.end() || !m->second.count(name)) {
        row.push_back("-");
        continue;
      }
      const MeanStd& ms = m->second.at(name);
      row.push_back(fmt(ms.mean, precision) + " ± " + fmt(ms.stddev, precision));
    }
    rows.push_back(std::move(row));
  }
  return aligned(rows);
}

}  // namespace toolpref
