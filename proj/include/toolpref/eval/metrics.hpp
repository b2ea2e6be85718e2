#pragma once

// Pass rates, judged win rates, step counts and the comparison tables built
// from them.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "toolpref/dfsdt/engine.hpp"
#include "toolpref/json.hpp"
#include "toolpref/world/world.hpp"

namespace toolpref {

enum class Verdict { PreferA, PreferB, Tie };
const char* to_string(Verdict v);

struct JudgeVerdict {
  Verdict verdict = Verdict::Tie;
  std::string rationale;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string name() const = 0;
  // Both results belong to the same task.
  virtual JudgeVerdict compare(const RolloutResult& a, const RolloutResult& b) const = 0;
};

// Ground truth first (share of sub-goals the delivered answer covers), then
// fewer actions. Stands in for an LLM judge.
class OracleJudge : public Judge {
 public:
  explicit OracleJudge(const World& world) : world_(world) {}
  std::string name() const override { return "oracle"; }
  JudgeVerdict compare(const RolloutResult& a, const RolloutResult& b) const override;
  // 0 when no answer was given.
  double answer_credit(const RolloutResult& r) const;

 private:
  const World& world_;
};

// A keyword-clean final answer beats anything else; otherwise a tie.
class KeywordJudge : public Judge {
 public:
  explicit KeywordJudge(std::vector<std::string> keywords = TreeOptions{}.meaningless_keywords)
      : keywords_(std::move(keywords)) {}
  std::string name() const override { return "keyword"; }
  JudgeVerdict compare(const RolloutResult& a, const RolloutResult& b) const override;

 private:
  std::vector<std::string> keywords_;
};

bool passes_keyword_filter(const RolloutResult& r, const std::vector<std::string>& keywords);

// Share of Pass results whose answer avoids every keyword. Empty input gives 0.
double pass_rate(const std::vector<RolloutResult>& results,
                 const std::vector<std::string>& keywords = TreeOptions{}.meaningless_keywords);

// Solvability-aware: an answer counts when it resolves the task, or when the
// task could not be resolved with the tools available. Give-ups never count.
bool passes_v2(const RolloutResult& r, const World& world);
double pass_rate_v2(const std::vector<RolloutResult>& results, const World& world);

// Results are matched by task id; throws UnpairedTask on any mismatch. Ties count 0.5.
double win_rate(const std::vector<RolloutResult>& a, const std::vector<RolloutResult>& b, const Judge& judge);

enum class StepsScope { PassAndGiveUp, PassOnly };

// Mean actions over Finish-terminated results. Throws NoQualifyingSamples.
double avg_steps(const std::vector<RolloutResult>& results, StepsScope scope = StepsScope::PassAndGiveUp);
std::optional<double> try_avg_steps(const std::vector<RolloutResult>& results,
                                    StepsScope scope = StepsScope::PassAndGiveUp);

// (baseline - treated) / baseline * 100. Throws ZeroBaseline when baseline <= 0.
double step_improvement_pct(double baseline, double treated);
// (treated - baseline) in points (rates scaled by 100).
double rate_improvement_points(double baseline, double treated);

struct MetricsCell {
  std::string scenario;  // scenario name, or "Avg"
  std::size_t n = 0;
  double pass_rate = 0.0;
  double pass_rate_v2 = 0.0;
  std::optional<double> win_rate;
  std::optional<double> avg_steps;
  std::size_t n_steps = 0;  // qualifying samples behind avg_steps
};

struct MetricsReport {
  std::string model;
  std::string judge;  // empty when no baseline was given
  std::vector<MetricsCell> scenarios;
  MetricsCell average;
};

struct EvalOptions {
  std::vector<std::string> keywords = TreeOptions{}.meaningless_keywords;
  StepsScope steps_scope = StepsScope::PassAndGiveUp;
};

// Groups results by their task's scenario; training-task results are rejected
// with UnknownTask. The average row is the arithmetic mean of scenario cells.
// With a baseline, win_rate is this model against it under `judge`.
MetricsReport evaluate(const std::string& model, const World& world, const std::vector<RolloutResult>& results,
                       const EvalOptions& options = {}, const std::vector<RolloutResult>* baseline = nullptr,
                       const Judge* judge = nullptr);

Json metrics_cell_to_json(const MetricsCell& c);
MetricsCell metrics_cell_from_json(const Json& j);
// One line per scenario then the average line; `meta` is merged into each line.
std::string report_to_jsonl(const MetricsReport& r, const Json& meta = Json::object());
MetricsReport report_from_jsonl(const std::string& text);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
  std::size_t n = 0;
};
MeanStd mean_std(const std::vector<double>& values);

// Same model over several seeds, cell by cell.
struct SeedSummary {
  std::string model;
  std::vector<std::string> scenarios;  // then "Avg"
  std::map<std::string, std::map<std::string, MeanStd>> cells;  // metric -> scenario -> stats
};
SeedSummary summarize_seeds(const std::vector<MetricsReport>& per_seed);
Json seed_summary_to_json(const SeedSummary& s);

// Aligned text table: one row per model, one column per scenario plus Avg.
// metric is "pass_rate", "pass_rate_v2", "win_rate" or "avg_steps".
std::string render_table(const std::vector<MetricsReport>& reports, const std::string& metric);
std::string render_summary_table(const std::vector<SeedSummary>& summaries, const std::string& metric);

}  // namespace toolpref
