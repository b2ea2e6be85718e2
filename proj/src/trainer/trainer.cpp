#include "toolpref/trainer/trainer.hpp"

#include <cmath>
#include <numeric>

#include "toolpref/errors.hpp"
#include "toolpref/random.hpp"

namespace toolpref {

void TrainConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  if (!(sft_lr > 0.0) || !(dpo_lr > 0.0)) throw ConfigError("learning rates must be > 0");
  if (sft_epochs < 0 || dpo_epochs < 0) throw ConfigError("epochs must be >= 0");
  if (sft_batch == 0 || dpo_batch == 0) throw ConfigError("batch sizes must be >= 1");
}

Json train_config_to_json(const TrainConfig& c) {
  return Json{{"beta", c.beta},           {"sft_lr", c.sft_lr},       {"dpo_lr", c.dpo_lr},
              {"sft_epochs", c.sft_epochs}, {"dpo_epochs", c.dpo_epochs}, {"sft_batch", c.sft_batch},
              {"dpo_batch", c.dpo_batch}, {"seed", c.seed}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  if (!j.is_object()) throw ConfigError("train config must be an object");
  try {
    c.beta = j.value("beta", c.beta);
    c.sft_lr = j.value("sft_lr", c.sft_lr);
    c.dpo_lr = j.value("dpo_lr", c.dpo_lr);
    c.sft_epochs = j.value("sft_epochs", c.sft_epochs);
    c.dpo_epochs = j.value("dpo_epochs", c.dpo_epochs);
    c.sft_batch = j.value("sft_batch", c.sft_batch);
    c.dpo_batch = j.value("dpo_batch", c.dpo_batch);
    c.seed = j.value("seed", c.seed);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  // log sigma(x) = -softplus(-x)
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double bt_probability(double r_w, double r_l) { return sigmoid(r_w - r_l); }

namespace {

void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += a * x[k];
}

double norm(const std::vector<double>& v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

std::vector<double> chosen_features_sum(const std::vector<RecordedStep>& segment) {
  std::vector<double> s(kFeatureDim, 0.0);
  for (const auto& step : segment) {
    if (!step.recorded) throw MissingCandidateRecord("segment step has no recorded candidate set");
    if (step.chosen >= step.candidates.features.size()) throw MaskedAction("chosen index outside candidate set");
    for (std::size_t k = 0; k < kFeatureDim; ++k) s[k] += step.candidates.features[step.chosen][k];
  }
  return s;
}

template <typename T>
std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<T>& data, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_in_place(order, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch)));
  }
  return out;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& data, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

}  // namespace

double linear_reward(const RewardModelParams& rm, const std::vector<RecordedStep>& segment) {
  const auto phi = chosen_features_sum(segment);
  return std::inner_product(phi.begin(), phi.end(), rm.weights.begin(), 0.0);
}

double reward_nll(const RewardFn& reward, const DpoBatch& batch) {
  if (batch.empty()) throw EmptyBatch("reward_nll on an empty batch");
  double s = 0.0;
  for (const auto& ex : batch) s -= log_sigmoid(reward(ex.preferred) - reward(ex.dispreferred));
  return s / static_cast<double>(batch.size());
}

double reward_nll(const RewardModelParams& rm, const DpoBatch& batch) {
  return reward_nll([&rm](const std::vector<RecordedStep>& seg) { return linear_reward(rm, seg); }, batch);
}

std::vector<double> reward_nll_grad(const RewardModelParams& rm, const DpoBatch& batch) {
  if (batch.empty()) throw EmptyBatch("reward_nll_grad on an empty batch");
  std::vector<double> g(kFeatureDim, 0.0);
  for (const auto& ex : batch) {
    const auto fw = chosen_features_sum(ex.preferred);
    const auto fl = chosen_features_sum(ex.dispreferred);
    const double d = linear_reward(rm, ex.preferred) - linear_reward(rm, ex.dispreferred);
    const double c = -sigmoid(-d);
    for (std::size_t k = 0; k < kFeatureDim; ++k) g[k] += c * (fw[k] - fl[k]);
  }
  for (double& v : g) v /= static_cast<double>(batch.size());
  return g;
}

double implicit_reward(const PolicyParams& params, const PolicyParams& ref, const std::vector<RecordedStep>& segment,
                       double beta) {
  return beta * (segment_log_prob(params, segment) - segment_log_prob(ref, segment));
}

double implicit_reward(const PolicyParams& params, const PolicyParams& ref, const ScoredCandidates& sc,
                       std::size_t index, double beta) {
  return beta * (log_prob(params, sc, index) - log_prob(ref, sc, index));
}

double dpo_margin(const PolicyParams& params, const PolicyParams& ref, const DpoExample& ex, double beta) {
  return implicit_reward(params, ref, ex.preferred, beta) - implicit_reward(params, ref, ex.dispreferred, beta);
}

double dpo_loss(const PolicyParams& params, const PolicyParams& ref, const DpoBatch& batch, double beta) {
  if (batch.empty()) throw EmptyBatch("dpo_loss on an empty batch");
  double s = 0.0;
  for (const auto& ex : batch) s -= log_sigmoid(dpo_margin(params, ref, ex, beta));
  return s / static_cast<double>(batch.size());
}

std::vector<double> dpo_grad(const PolicyParams& params, const PolicyParams& ref, const DpoBatch& batch, double beta) {
  if (batch.empty()) throw EmptyBatch("dpo_grad on an empty batch");
  std::vector<double> g(kFeatureDim, 0.0);
  for (const auto& ex : batch) {
    const double c = -sigmoid(-dpo_margin(params, ref, ex, beta)) * beta;
    axpy(g, c, segment_grad_log_prob(params, ex.preferred));
    axpy(g, -c, segment_grad_log_prob(params, ex.dispreferred));
  }
  for (double& v : g) v /= static_cast<double>(batch.size());
  return g;
}

double sft_loss(const PolicyParams& params, const SftBatch& batch) {
  if (batch.empty()) throw EmptyBatch("sft_loss on an empty batch");
  return -segment_log_prob(params, batch) / static_cast<double>(batch.size());
}

std::vector<double> sft_grad(const PolicyParams& params, const SftBatch& batch) {
  if (batch.empty()) throw EmptyBatch("sft_grad on an empty batch");
  auto g = segment_grad_log_prob(params, batch);
  for (double& v : g) v = -v / static_cast<double>(batch.size());
  return g;
}

Json TrainLogEntry::to_json() const {
  return Json{{"stage", stage},
              {"epoch", epoch},
              {"batch", batch},
              {"loss", loss},
              {"grad_norm", grad_norm},
              {"margin_mean", margin_mean ? Json(*margin_mean) : Json(nullptr)}};
}

TrainResult train_sft(const PolicyParams& init, const SftBatch& dataset, const TrainConfig& config) {
  config.validate();
  TrainResult r{init, {}};
  r.params.version_tag = "sft";
  if (dataset.empty()) {
    r.params = init;
    return r;
  }
  Rng rng(hash_combine(config.seed, "sft"));
  for (int epoch = 0; epoch < config.sft_epochs; ++epoch) {
    std::size_t b = 0;
    for (const auto& idx : epoch_batches(dataset, config.sft_batch, rng)) {
      const SftBatch batch = gather(dataset, idx);
      const double loss = sft_loss(r.params, batch);
      const auto g = sft_grad(r.params, batch);
      r.log.push_back(TrainLogEntry{"sft", epoch, b++, loss, norm(g), std::nullopt});
      axpy(r.params.weights, -config.sft_lr, g);
    }
  }
  return r;
}

TrainResult train_dpo(const PolicyParams& sft_params, const DpoBatch& dataset, const TrainConfig& config) {
  config.validate();
  const PolicyParams ref = sft_params;
  TrainResult r{sft_params, {}};
  if (dataset.empty() || config.dpo_epochs == 0) return r;
  r.params.version_tag = "dpo";
  Rng rng(hash_combine(config.seed, "dpo"));
  for (int epoch = 0; epoch < config.dpo_epochs; ++epoch) {
    std::size_t b = 0;
    for (const auto& idx : epoch_batches(dataset, config.dpo_batch, rng)) {
      const DpoBatch batch = gather(dataset, idx);
      const double loss = dpo_loss(r.params, ref, batch, config.beta);
      double margin = 0.0;
      for (const auto& ex : batch) margin += dpo_margin(r.params, ref, ex, config.beta);
      const auto g = dpo_grad(r.params, ref, batch, config.beta);
      r.log.push_back(TrainLogEntry{"dpo", epoch, b++, loss, norm(g), margin / static_cast<double>(batch.size())});
      axpy(r.params.weights, -config.dpo_lr, g);
    }
  }
  return r;
}

RecordedStep record_step(const FeatureContext& ctx, const DecisionTree& tree, NodeId node) {
  const TreeNode& n = tree.node(node);
  if (!n.parent) throw MissingCandidateRecord("root node carries no decision");
  const TreeNode& parent = tree.node(*n.parent);
  if (parent.candidates.empty()) {
    throw MissingCandidateRecord("node " + std::to_string(parent.id) + " of " + tree.tree_id() +
                                 " has no recorded candidates");
  }
  const Decision d = *n.decision();
  const auto it = std::find(parent.candidates.begin(), parent.candidates.end(), d);
  if (it == parent.candidates.end()) {
    throw MissingCandidateRecord("decision " + d.to_string() + " is not in the recorded candidates of node " +
                                 std::to_string(parent.id));
  }
  RecordedStep step;
  step.candidates.features = ctx.featurize_all(state_at(tree, node).history, parent.candidates);
  step.candidates.masked.assign(parent.candidates.size(), false);
  step.chosen = static_cast<std::size_t>(it - parent.candidates.begin());
  return step;
}

DpoExample bind_pair(const World& world, const DecisionTree& tree, const PreferencePair& pair) {
  const FeatureContext ctx(world, tree.instruction());
  DpoExample ex;
  for (const auto& s : pair.preferred) ex.preferred.push_back(record_step(ctx, tree, s.node));
  for (const auto& s : pair.dispreferred) ex.dispreferred.push_back(record_step(ctx, tree, s.node));
  return ex;
}

RecordedStep bind_sft(const World& world, const DecisionTree& tree, const SftExample& example) {
  return record_step(FeatureContext(world, tree.instruction()), tree, example.node);
}

}  // namespace toolpref
