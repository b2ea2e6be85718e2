#pragma once

// SFT and DPO objectives for the log-linear policy, with analytic gradients,
// plus the Bradley-Terry reward NLL they are derived from.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "toolpref/forge/forge.hpp"
#include "toolpref/json.hpp"
#include "toolpref/policy/policy.hpp"

namespace toolpref {

struct TrainConfig {
  double beta = 0.5;
  double sft_lr = 1e-5;
  double dpo_lr = 1e-6;
  int sft_epochs = 2;
  int dpo_epochs = 1;
  std::size_t sft_batch = 16;
  std::size_t dpo_batch = 8;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

Json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

using SftBatch = std::vector<RecordedStep>;

// y_w and y_l continuing the same context; one step each for step-wise pairs.
struct DpoExample {
  std::vector<RecordedStep> preferred;
  std::vector<RecordedStep> dispreferred;
};
using DpoBatch = std::vector<DpoExample>;

double sigmoid(double x);
double log_sigmoid(double x);  // -softplus(-x), stable for large |x|
double bt_probability(double r_w, double r_l);

// Explicit reward head r(x, y) = sum over steps of v . phi(step).
struct RewardModelParams {
  std::vector<double> weights = std::vector<double>(kFeatureDim, 0.0);
};
double linear_reward(const RewardModelParams& rm, const std::vector<RecordedStep>& segment);

using RewardFn = std::function<double(const std::vector<RecordedStep>&)>;
// mean over pairs of -log sigma(r(y_w) - r(y_l)); throws EmptyBatch.
double reward_nll(const RewardFn& reward, const DpoBatch& batch);
double reward_nll(const RewardModelParams& rm, const DpoBatch& batch);
std::vector<double> reward_nll_grad(const RewardModelParams& rm, const DpoBatch& batch);

// beta * (log pi_theta(y|x) - log pi_ref(y|x))
double implicit_reward(const PolicyParams& params, const PolicyParams& ref, const std::vector<RecordedStep>& segment,
                       double beta);
double implicit_reward(const PolicyParams& params, const PolicyParams& ref, const ScoredCandidates& sc,
                       std::size_t index, double beta);

// Implicit-reward difference r(y_w) - r(y_l).
double dpo_margin(const PolicyParams& params, const PolicyParams& ref, const DpoExample& ex, double beta);
double dpo_loss(const PolicyParams& params, const PolicyParams& ref, const DpoBatch& batch, double beta);
std::vector<double> dpo_grad(const PolicyParams& params, const PolicyParams& ref, const DpoBatch& batch, double beta);

double sft_loss(const PolicyParams& params, const SftBatch& batch);
std::vector<double> sft_grad(const PolicyParams& params, const SftBatch& batch);

struct TrainLogEntry {
  std::string stage;
  int epoch = 0;
  std::size_t batch = 0;
  double loss = 0.0;  // before this batch's update
  double grad_norm = 0.0;
  std::optional<double> margin_mean;

  Json to_json() const;
};

struct TrainResult {
  PolicyParams params;
  std::vector<TrainLogEntry> log;
};

// Mini-batch gradient descent with constant step; examples reshuffled per epoch from the seed.
TrainResult train_sft(const PolicyParams& init, const SftBatch& dataset, const TrainConfig& config);
// pi_ref is a frozen copy of sft_params, which also initializes pi_theta.
TrainResult train_dpo(const PolicyParams& sft_params, const DpoBatch& dataset, const TrainConfig& config);

// Binding recorded trees to training examples. The candidate set of a node's
// decision is the one recorded on its parent; throws MissingCandidateRecord.
RecordedStep record_step(const FeatureContext& ctx, const DecisionTree& tree, NodeId node);
DpoExample bind_pair(const World& world, const DecisionTree& tree, const PreferencePair& pair);
RecordedStep bind_sft(const World& world, const DecisionTree& tree, const SftExample& example);

}  // namespace toolpref
