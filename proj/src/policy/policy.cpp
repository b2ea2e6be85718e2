#include "toolpref/policy/policy.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "toolpref/errors.hpp"

namespace toolpref {

namespace {

// log-sum-exp over unmasked entries.
double log_normalizer(const std::vector<double>& z) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : z) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : z) {
    if (std::isfinite(v)) s += std::exp(v - m);
  }
  return m + std::log(s);
}

void check_dim(const PolicyParams& params) {
  if (params.weights.size() != kFeatureDim) {
    throw CheckpointError("policy has " + std::to_string(params.weights.size()) + " weights, expected " +
                          std::to_string(kFeatureDim));
  }
}

}  // namespace

std::size_t CandidateSet::unmasked_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) n += is_masked(i) ? 0 : 1;
  return n;
}

std::optional<std::size_t> CandidateSet::index_of(const Decision& d) const {
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (decisions[i] == d) return i;
  }
  return std::nullopt;
}

ScoredCandidates score_candidates(const FeatureContext& ctx, const ReasoningState& state, const CandidateSet& set) {
  ScoredCandidates sc;
  sc.features = ctx.featurize_all(state.history, set.decisions);
  sc.masked.resize(set.decisions.size());
  for (std::size_t i = 0; i < set.decisions.size(); ++i) sc.masked[i] = set.is_masked(i);
  return sc;
}

double dot(const std::vector<double>& w, const FeatureVector& phi) {
  double s = 0.0;
  for (std::size_t k = 0; k < kFeatureDim; ++k) s += w[k] * phi[k];
  return s;
}

std::vector<double> logits(const PolicyParams& params, const ScoredCandidates& sc, double temperature) {
  check_dim(params);
  std::vector<double> z(sc.features.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = sc.is_masked(i) ? -std::numeric_limits<double>::infinity() : dot(params.weights, sc.features[i]) / temperature;
  }
  return z;
}

std::vector<double> probabilities(const PolicyParams& params, const ScoredCandidates& sc, double temperature) {
  std::vector<double> z = logits(params, sc, temperature);
  const double lz = log_normalizer(z);
  for (double& v : z) v = std::isfinite(v) ? std::exp(v - lz) : 0.0;
  return z;
}

double log_prob(const PolicyParams& params, const ScoredCandidates& sc, std::size_t index) {
  if (index >= sc.features.size()) throw MaskedAction("decision is not among the candidates");
  if (sc.is_masked(index)) throw MaskedAction("decision is masked at this state");
  const std::vector<double> z = logits(params, sc);
  return z[index] - log_normalizer(z);
}

std::vector<double> grad_log_prob(const PolicyParams& params, const ScoredCandidates& sc, std::size_t index) {
  if (index >= sc.features.size()) throw MaskedAction("decision is not among the candidates");
  if (sc.is_masked(index)) throw MaskedAction("decision is masked at this state");
  const std::vector<double> p = probabilities(params, sc);
  std::vector<double> g(sc.features[index].begin(), sc.features[index].end());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    for (std::size_t k = 0; k < kFeatureDim; ++k) g[k] -= p[i] * sc.features[i][k];
  }
  return g;
}

std::size_t sample_index(const PolicyParams& params, const ScoredCandidates& sc, Rng& rng, double temperature) {
  const std::vector<double> p = probabilities(params, sc, temperature);
  std::size_t last = p.size();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!sc.is_masked(i)) last = i;
  }
  if (last == p.size()) throw EmptyCandidates("no unmasked candidates to sample from");
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (sc.is_masked(i)) continue;
    acc += p[i];
    if (u < acc) return i;
  }
  return last;
}

double log_prob(const PolicyParams& params, const FeatureContext& ctx, const ReasoningState& state,
                const CandidateSet& set, const Decision& decision) {
  const auto idx = set.index_of(decision);
  if (!idx) throw MaskedAction("decision " + decision.to_string() + " is not among the candidates");
  return log_prob(params, score_candidates(ctx, state, set), *idx);
}

Decision sample_action(const PolicyParams& params, const FeatureContext& ctx, const ReasoningState& state,
                       const CandidateSet& set, Rng& rng, double temperature) {
  return set.decisions[sample_index(params, score_candidates(ctx, state, set), rng, temperature)];
}

double segment_log_prob(const PolicyParams& params, const std::vector<RecordedStep>& segment) {
  double s = 0.0;
  for (const auto& step : segment) {
    if (!step.recorded) throw MissingCandidateRecord("segment step has no recorded candidate set");
    s += log_prob(params, step.candidates, step.chosen);
  }
  return s;
}

std::vector<double> segment_grad_log_prob(const PolicyParams& params, const std::vector<RecordedStep>& segment) {
  std::vector<double> g(kFeatureDim, 0.0);
  for (const auto& step : segment) {
    if (!step.recorded) throw MissingCandidateRecord("segment step has no recorded candidate set");
    const auto gi = grad_log_prob(params, step.candidates, step.chosen);
    for (std::size_t k = 0; k < kFeatureDim; ++k) g[k] += gi[k];
  }
  return g;
}

Json params_to_json(const PolicyParams& params, const Json& meta) {
  check_dim(params);
  Json j;
  j["format"] = "toolpref-policy";
  j["version"] = 1;
  j["version_tag"] = params.version_tag;
  j["feature_schema_hash"] = feature_schema_hash();
  Json names = Json::array();
  for (const char* n : feature_names()) names.push_back(n);
  j["features"] = std::move(names);
  j["weights"] = params.weights;
  if (!meta.is_null()) j["meta"] = meta;
  return j;
}

PolicyParams params_from_json(const Json& j) {
  try {
    if (!j.is_object() || j.value("format", "") != "toolpref-policy") throw CheckpointError("not a policy checkpoint");
    if (j.at("version").get<int>() != 1) throw CheckpointError("unsupported checkpoint version");
    if (j.at("feature_schema_hash").get<std::uint64_t>() != feature_schema_hash()) {
      throw CheckpointError("checkpoint feature schema does not match this build");
    }
    PolicyParams p;
    p.version_tag = j.at("version_tag").get<std::string>();
    p.weights = j.at("weights").get<std::vector<double>>();
    check_dim(p);
    for (double w : p.weights) {
      if (!std::isfinite(w)) throw CheckpointError("checkpoint holds a non-finite weight");
    }
    return p;
  } catch (const Json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const PolicyParams& params, const std::string& path, const Json& meta) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out << params_to_json(params, meta).dump(1) << '\n';
}

PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
  return params_from_json(j);
}

}  // namespace toolpref
