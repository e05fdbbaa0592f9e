#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "qvrp/autodiff.hpp"
#include "qvrp/env.hpp"
#include "qvrp/qonn.hpp"
#include "qvrp/tensor.hpp"

namespace qvrp::policy {

// Which projections pass through a quantum orthogonal layer (for heads that
// carry circuits): none, encoder queries and keys only, or every query, key
// and value in encoder and decoder.
enum class QuantumScope { none, encoder_qk, all };

const char* to_string(QuantumScope scope);
QuantumScope quantum_scope_from_string(const std::string& s);

struct ModelConfig {
  static constexpr int kEncoderLayers = 3;

  int d = 128;
  int d_ff = 512;
  int n_heads = 8;
  int n_quantum_heads = 0;  // heads 0..k-1 carry circuits
  QuantumScope quantum_scope = QuantumScope::none;
  double dropout_rate = 0.0;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double pointer_clip = 10.0;

  int head_dim() const { return d / n_heads; }
  bool head_quantum(int head) const { return head < n_quantum_heads; }
  bool quantum_projection(bool decoder, char projection) const;  // 'q','k','v'
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  // d=128, 8 heads, 16-qubit circuits on every encoder and decoder q/k/v.
  static ModelConfig simulation_only();
  // d=64, 8 heads, 8-qubit circuits on encoder queries and keys only.
  static ModelConfig hardware_experiment();
};

// Named parameter tensors plus non-learned state (batch-norm accumulators).
struct ParamStore {
  std::map<std::string, Tensor> values;
  std::set<std::string> state_keys;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool is_state(const std::string& name) const { return state_keys.count(name) > 0; }
  void add_param(const std::string& name, Tensor t);
  void add_state(const std::string& name, Tensor t);
  std::vector<std::string> param_names() const;  // learned only, sorted
  int64_t param_count() const;
};

ParamStore init_params(const ModelConfig& config, uint64_t seed);

// Per-episode encoder inputs, all taken from the initial environment state:
// node features (x, y, delta_in, delta_out), source columns and the matrix
// demand used for dynamical masking.
struct EncodeInputs {
  Tensor features;       // [n, 4]
  Tensor delta_out_col;  // [n]
  Tensor delta_in_col;   // [n]
  Tensor demand_matrix;  // [n, n]

  static EncodeInputs from_state(const env::EnvState& state);
};

// Binds parameters of one store to one tape; each parameter becomes a single
// leaf so gradients accumulate across uses.
struct Forward {
  ad::Tape* tape = nullptr;
  const ModelConfig* config = nullptr;
  ParamStore* store = nullptr;
  bool trainable = false;
  std::map<std::string, ad::Var> bound;
  // When set, batch-norm state mutations land in this side table instead of
  // the store (used by replays so they never disturb the live statistics).
  std::map<std::string, Tensor>* state_override = nullptr;
  // Inference forwards disable dropout regardless of the tape mode.
  bool inference = false;

  ad::Var p(const std::string& name);
  Tensor& bn_state(const std::string& name);
  void collect_grads(std::map<std::string, Tensor>& grads) const;
};

ad::Var embed_inputs(Forward& f, ad::Var features);

// One multi-head attention block of encoder layer `layer` over node
// embeddings h, with vector sources on keys/values and dynamical masking.
ad::Var encoder_mha(Forward& f, int layer, ad::Var h, const EncodeInputs& inputs);

// Three encoder layers over a single instance.
ad::Var encode(Forward& f, const EncodeInputs& inputs);

// Batched encoder: batch-norm statistics span all instances' node positions.
// All instances must share the node count; returns [B*n, d].
ad::Var encode_batch(Forward& f, const std::vector<EncodeInputs>& inputs);

struct DecodeStep {
  ad::Var probs;                    // [1, n+1]; invalid when forced_end
  std::vector<double> probs_value;  // action probabilities (node 0..n-1, end)
  bool forced_end = false;          // no feasible node: end with probability 1
};

DecodeStep decode_step(Forward& f, ad::Var encoded, const env::EnvState& state, int truck);

enum class DecodeMode { sample, greedy };
enum class Objective { sum_of_logs, log_of_sum };

struct RolloutResult {
  double reward = 0.0;
  double cost = 0.0;  // -reward
  double coverage = 0.0;
  double makespan = 0.0;
  double logprob = 0.0;
  std::vector<int> actions;           // decision order (active-truck order)
  std::vector<double> step_probs;     // chosen probability per decision
  std::vector<std::vector<int>> routes;  // per truck
  std::vector<env::RouteLogEntry> route_log;
  std::map<env::OriginKey, double> fulfilled;
  int steps = 0;
};

// Evaluation rollout (no gradients, running-statistics batch norm).
RolloutResult rollout(std::shared_ptr<const env::Instance> instance, ParamStore& store,
                      const ModelConfig& config, DecodeMode mode, uint64_t seed);

// Replays a fixed action sequence and differentiates its log-probability.
// Batch-norm runs in training mode when `training` is set (statistics over
// this instance's node positions); gradients cover every learned parameter.
struct ReplayResult {
  double logprob = 0.0;
  std::map<std::string, Tensor> grads;
};

ReplayResult replay_logprob(std::shared_ptr<const env::Instance> instance, ParamStore& store,
                            const ModelConfig& config, const std::vector<int>& actions,
                            bool training, bool want_grads,
                            Objective objective = Objective::sum_of_logs);

// Sampled batch with gradients: encoder runs once over the whole batch
// (training-mode batch norm), each episode decodes on its own tape.
struct TrainEpisode {
  RolloutResult result;
  std::unique_ptr<ad::Tape> tape;
  Forward forward;
  ad::Var h_leaf;
  ad::Var objective;
  bool has_objective = false;
  int row0 = 0;  // slice offset in the batched encoder output
};

struct TrainBatch {
  std::unique_ptr<ad::Tape> enc_tape;
  Forward enc_forward;
  ad::Var enc_out;
  int nodes_per_instance = 0;
  std::vector<TrainEpisode> episodes;
};

TrainBatch live_batch(const std::vector<std::shared_ptr<const env::Instance>>& instances,
                      ParamStore& store, const ModelConfig& config,
                      const std::vector<uint64_t>& seeds, Objective objective);

// Greedy rollouts under the same batched training-mode normalization as
// live_batch, so baseline costs are comparable with the sampled episodes.
// Batch-norm state is side-copied: the store's running statistics stay put.
std::vector<RolloutResult> greedy_batch(
    const std::vector<std::shared_ptr<const env::Instance>>& instances, ParamStore& store,
    const ModelConfig& config);

// Forwards `batches` training-mode encoder passes so the running statistics
// settle on the current policy's activation distribution.
void calibrate_batch_norm(ParamStore& store, const ModelConfig& config,
                          const std::vector<std::vector<std::shared_ptr<const env::Instance>>>& batches);

// d(sum_i weight_i * objective_i)/d(params). Consumes the batch's tapes.
std::map<std::string, Tensor> batch_gradients(TrainBatch& batch,
                                              const std::vector<double>& weights);

uint64_t config_hash(const ModelConfig& config);

void save_checkpoint(const std::string& prefix, const ParamStore& store,
                     const ModelConfig& config, const nlohmann::json& extra);

struct Checkpoint {
  ParamStore store;
  ModelConfig config;
  nlohmann::json extra;
};

Checkpoint load_checkpoint(const std::string& prefix);

}  // namespace qvrp::policy
