#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "qvrp/env.hpp"
#include "qvrp/policy.hpp"

namespace qvrp::train {

// Synthetic instance distribution: nodes uniform in the unit square, demand
// tuples uniform over node tuples with volumes in [vol_min, clip].
struct SamplerSpec {
  int n_nodes = 8;
  int n_trucks = 2;
  double capacity = 10.0;
  double horizon = 2000.0;      // seconds
  double time_scale = 1000.0;   // seconds per unit distance
  int n_tuples = 4;
  double p_rank3 = 0.0;         // probability a tuple has rank 3
  double cyclic_fraction = 0.0; // probability a tuple is cyclic
  double vol_min = 1.0;
  double clip = 10.0;           // demand clip C: maximum tuple volume
  double unmet_penalty = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static SamplerSpec from_json(const nlohmann::json& j);
};

struct TrainConfig {
  int num_epochs = 100;
  int batch_size = 64;
  int batches_per_epoch = 4;
  double learning_rate = 1e-3;
  double baseline_significance = 0.05;
  int eval_set_size = 64;
  SamplerSpec sampler;
  uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between checkpoints written by the caller
  policy::Objective objective = policy::Objective::sum_of_logs;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochMetrics {
  int epoch = 0;
  double mean_cost = 0.0;
  double mean_coverage = 0.0;
  double mean_time_s = 0.0;
  bool baseline_updated = false;
};

struct TrainResult {
  policy::ParamStore params;
  std::vector<EpochMetrics> metrics;
  double clip_default = 0.0;  // 95th percentile of training tuple volumes
};

std::shared_ptr<env::Instance> sample_instance(const SamplerSpec& spec, uint64_t seed);

// Adam with bias correction; moments are kept per parameter name.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

void descent(policy::ParamStore& store, const std::map<std::string, Tensor>& grads,
             AdamState& adam, double learning_rate);

// One-sided paired t-test on greedy costs over the eval set: true when the
// live policy is significantly cheaper than the baseline.
bool baseline_test(policy::ParamStore& live, policy::ParamStore& baseline,
                   const policy::ModelConfig& model,
                   const std::vector<std::shared_ptr<const env::Instance>>& eval_set,
                   double significance);

using EpochCallback = std::function<void(const EpochMetrics&, const policy::ParamStore&)>;

TrainResult train(const TrainConfig& config, const policy::ModelConfig& model,
                  policy::ParamStore initial, const EpochCallback& on_epoch = nullptr);

std::string metrics_csv(const std::vector<EpochMetrics>& metrics);

}  // namespace qvrp::train
