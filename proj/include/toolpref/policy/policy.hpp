#pragma once

// Log-linear softmax policy over a recorded candidate set:
//   pi(a | s) = exp(w . phi(s, a) / tau) / sum over unmasked b of exp(w . phi(s, b) / tau)

#include <string>
#include <vector>

#include "toolpref/json.hpp"
#include "toolpref/policy/features.hpp"
#include "toolpref/random.hpp"

namespace toolpref {

struct PolicyParams {
  std::vector<double> weights = std::vector<double>(kFeatureDim, 0.0);
  std::string version_tag = "init";

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

// Decisions on offer at a state; masked entries are excluded from the softmax.
struct CandidateSet {
  std::vector<Decision> decisions;
  std::vector<bool> masked;  // same length as decisions (or empty: nothing masked)

  bool is_masked(std::size_t i) const { return i < masked.size() && masked[i]; }
  std::size_t unmasked_count() const;
  std::optional<std::size_t> index_of(const Decision& d) const;
};

// Featurized candidate set; everything the softmax needs.
struct ScoredCandidates {
  std::vector<FeatureVector> features;
  std::vector<bool> masked;

  bool is_masked(std::size_t i) const { return i < masked.size() && masked[i]; }
};

ScoredCandidates score_candidates(const FeatureContext& ctx, const ReasoningState& state, const CandidateSet& set);

double dot(const std::vector<double>& w, const FeatureVector& phi);

// Logits w.phi/tau; masked entries get -inf.
std::vector<double> logits(const PolicyParams& params, const ScoredCandidates& sc, double temperature = 1.0);
std::vector<double> probabilities(const PolicyParams& params, const ScoredCandidates& sc, double temperature = 1.0);
// Throws MaskedAction for a masked or out-of-range index.
double log_prob(const PolicyParams& params, const ScoredCandidates& sc, std::size_t index);
// d/dw log pi(index) = phi(index) - E_pi[phi]
std::vector<double> grad_log_prob(const PolicyParams& params, const ScoredCandidates& sc, std::size_t index);

// Throws EmptyCandidates when every candidate is masked.
std::size_t sample_index(const PolicyParams& params, const ScoredCandidates& sc, Rng& rng, double temperature = 1.0);

double log_prob(const PolicyParams& params, const FeatureContext& ctx, const ReasoningState& state,
                const CandidateSet& set, const Decision& decision);
Decision sample_action(const PolicyParams& params, const FeatureContext& ctx, const ReasoningState& state,
                       const CandidateSet& set, Rng& rng, double temperature = 1.0);

// One decision of a multi-step segment together with the candidates it was chosen from.
struct RecordedStep {
  ScoredCandidates candidates;
  std::size_t chosen = 0;
  bool recorded = true;  // false when the source carried no candidate record
};

// Sum of per-step log-probs; throws MissingCandidateRecord.
double segment_log_prob(const PolicyParams& params, const std::vector<RecordedStep>& segment);
std::vector<double> segment_grad_log_prob(const PolicyParams& params, const std::vector<RecordedStep>& segment);

// Checkpoint: versioned flat weight vector plus the feature-schema hash.
Json params_to_json(const PolicyParams& params, const Json& meta = nullptr);
PolicyParams params_from_json(const Json& j);  // throws CheckpointError
void save_checkpoint(const PolicyParams& params, const std::string& path, const Json& meta = nullptr);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace toolpref
