#include "qvrp/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>

#include "qvrp/errors.hpp"
#include "qvrp/kernels.hpp"
#include "qvrp/rng.hpp"

namespace qvrp::policy {

namespace {

std::shared_ptr<const qonn::GatePairs> shared_pairs(int n) {
  static std::mutex mu;
  static std::map<int, std::shared_ptr<const qonn::GatePairs>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  auto pairs = std::make_shared<const qonn::GatePairs>(qonn::pyramid_pairs(n));
  cache[n] = pairs;
  return pairs;
}

ad::Var linear(Forward& f, ad::Var x, const std::string& w, const std::string& b) {
  return f.tape->add_rowvec(f.tape->matmul(x, f.p(w)), f.p(b));
}

}  // namespace

const char* to_string(QuantumScope scope) {
  switch (scope) {
    case QuantumScope::none: return "none";
    case QuantumScope::encoder_qk: return "encoder_qk";
    case QuantumScope::all: return "all";
  }
  return "none";
}

QuantumScope quantum_scope_from_string(const std::string& s) {
  if (s == "none") return QuantumScope::none;
  if (s == "encoder_qk") return QuantumScope::encoder_qk;
  if (s == "all") return QuantumScope::all;
  throw ConfigError("unknown quantum scope: " + s);
}

bool ModelConfig::quantum_projection(bool decoder, char projection) const {
  switch (quantum_scope) {
    case QuantumScope::none:
      return false;
    case QuantumScope::encoder_qk:
      return !decoder && (projection == 'q' || projection == 'k');
    case QuantumScope::all:
      return true;
  }
  return false;
}

void ModelConfig::validate() const {
  if (d < 1 || n_heads < 1 || d_ff < 1) throw ConfigError("model: dimensions must be positive");
  if (d % n_heads != 0) throw ConfigError("model: d must be divisible by n_heads");
  if (n_quantum_heads < 0 || n_quantum_heads > n_heads)
    throw ConfigError("model: quantum head count out of range");
  if (n_quantum_heads > 0 && quantum_scope != QuantumScope::none && head_dim() < 2)
    throw ConfigError("model: quantum heads need head dimension >= 2");
  if (dropout_rate < 0 || dropout_rate >= 1) throw ConfigError("model: dropout rate out of range");
}

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{
      {"d", d},
      {"d_ff", d_ff},
      {"n_heads", n_heads},
      {"n_quantum_heads", n_quantum_heads},
      {"quantum_scope", to_string(quantum_scope)},
      {"dropout_rate", dropout_rate},
      {"bn_momentum", bn_momentum},
      {"bn_eps", bn_eps},
      {"pointer_clip", pointer_clip},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d = j.value("d", c.d);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_quantum_heads = j.value("n_quantum_heads", c.n_quantum_heads);
  if (j.contains("quantum_scope"))
    c.quantum_scope = quantum_scope_from_string(j.at("quantum_scope").get<std::string>());
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.bn_eps = j.value("bn_eps", c.bn_eps);
  c.pointer_clip = j.value("pointer_clip", c.pointer_clip);
  c.validate();
  return c;
}

ModelConfig ModelConfig::simulation_only() {
  ModelConfig c;
  c.d = 128;
  c.d_ff = 512;
  c.n_heads = 8;
  c.n_quantum_heads = 8;
  c.quantum_scope = QuantumScope::all;
  return c;
}

ModelConfig ModelConfig::hardware_experiment() {
  ModelConfig c;
  c.d = 64;
  c.d_ff = 256;
  c.n_heads = 8;
  c.n_quantum_heads = 8;
  c.quantum_scope = QuantumScope::encoder_qk;
  return c;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = values.find(name);
  if (it == values.end()) throw ArgumentError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) throw ArgumentError("unknown parameter: " + name);
  return it->second;
}

void ParamStore::add_param(const std::string& name, Tensor t) {
  if (!values.emplace(name, std::move(t)).second)
    throw ArgumentError("duplicate parameter: " + name);
}

void ParamStore::add_state(const std::string& name, Tensor t) {
  add_param(name, std::move(t));
  state_keys.insert(name);
}

std::vector<std::string> ParamStore::param_names() const {
  std::vector<std::string> names;
  for (const auto& [name, t] : values)
    if (!is_state(name)) names.push_back(name);
  return names;
}

int64_t ParamStore::param_count() const {
  int64_t total = 0;
  for (const auto& [name, t] : values)
    if (!is_state(name)) total += t.size();
  return total;
}

namespace {

Tensor uniform_tensor(std::vector<int> shape, double lo, double hi, StreamRng& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(lo, hi);
  return t;
}

void add_head_params(ParamStore& store, const ModelConfig& config, const std::string& prefix,
                     bool decoder, int head, double bound, StreamRng& rng) {
  int d = config.d, a = config.head_dim();
  store.add_param(prefix + ".Wq", uniform_tensor({d, a}, -bound, bound, rng));
  store.add_param(prefix + ".Wk", uniform_tensor({d, a}, -bound, bound, rng));
  store.add_param(prefix + ".Wv", uniform_tensor({d, a}, -bound, bound, rng));
  if (!decoder) {
    store.add_param(prefix + ".u_key_out", uniform_tensor({1, a}, -bound, bound, rng));
    store.add_param(prefix + ".u_key_in", uniform_tensor({1, a}, -bound, bound, rng));
    store.add_param(prefix + ".u_val_out", uniform_tensor({1, a}, -bound, bound, rng));
    store.add_param(prefix + ".u_val_in", uniform_tensor({1, a}, -bound, bound, rng));
    // masking blend (basic, mask, log, lin)
    store.add_param(prefix + ".A", Tensor::matrix(1, 4, {1, 0, 0, 0}));
  } else {
    // decoder sources carry the current per-node state: material on the
    // active truck bound for each node plus waiting/incoming volume
    for (const char* u : {".u_key_eps", ".u_key_out", ".u_key_in", ".u_val_eps",
                          ".u_val_out", ".u_val_in"})
      store.add_param(prefix + u, uniform_tensor({1, a}, -bound, bound, rng));
  }
  if (config.head_quantum(head)) {
    int params = a * (a - 1) / 2;
    const double pi = 3.14159265358979323846;
    for (char proj : {'q', 'k', 'v'})
      if (config.quantum_projection(decoder, proj))
        store.add_param(prefix + ".th_" + proj, uniform_tensor({1, params}, -pi, pi, rng));
  }
}

}  // namespace

ParamStore init_params(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ParamStore store;
  StreamRng rng = StreamRng::derive(seed, "init");
  int d = config.d;
  double bound = 1.0 / std::sqrt(static_cast<double>(d));

  store.add_param("embed.W", uniform_tensor({4, d}, -bound, bound, rng));
  store.add_param("embed.b", Tensor({1, d}));

  for (int l = 0; l < ModelConfig::kEncoderLayers; ++l) {
    std::string lp = "enc" + std::to_string(l);
    for (int s = 0; s < config.n_heads; ++s)
      add_head_params(store, config, lp + ".h" + std::to_string(s), false, s, bound, rng);
    store.add_param(lp + ".Wo", uniform_tensor({config.n_heads * config.head_dim(), d},
                                               -bound, bound, rng));
    store.add_param(lp + ".bo", Tensor({1, d}));
    store.add_param(lp + ".ff.W1", uniform_tensor({d, config.d_ff}, -bound, bound, rng));
    store.add_param(lp + ".ff.b1", Tensor({1, config.d_ff}));
    store.add_param(lp + ".ff.W2", uniform_tensor({config.d_ff, d}, -bound, bound, rng));
    store.add_param(lp + ".ff.b2", Tensor({1, d}));
    for (const char* bn : {".bn1", ".bn2"}) {
      store.add_param(lp + bn + ".g", Tensor::full({1, d}, 1.0));
      store.add_param(lp + bn + ".b", Tensor({1, d}));
      store.add_state(lp + bn + ".mean", Tensor({d}));
      store.add_state(lp + bn + ".var", Tensor::full({d}, 1.0));
    }
  }

  store.add_param("dec.ctx.W", uniform_tensor({2 * d + 3, d}, -bound, bound, rng));
  store.add_param("dec.ctx.b", Tensor({1, d}));
  for (int s = 0; s < config.n_heads; ++s)
    add_head_params(store, config, "dec.h" + std::to_string(s), true, s, bound, rng);
  store.add_param("dec.Wo", uniform_tensor({config.n_heads * config.head_dim(), d},
                                           -bound, bound, rng));
  store.add_param("dec.bo", Tensor({1, d}));
  store.add_param("dec.ptr.Wq", uniform_tensor({d, d}, -bound, bound, rng));
  store.add_param("dec.ptr.Wk", uniform_tensor({d, d}, -bound, bound, rng));
  store.add_param("dec.end", uniform_tensor({1, d}, -bound, bound, rng));
  return store;
}

EncodeInputs EncodeInputs::from_state(const env::EnvState& state) {
  const env::Instance& inst = state.instance();
  int n = inst.node_count();
  EncodeInputs in;
  in.features = Tensor({n, 4});
  const auto& my = state.cached_myopic();
  for (int i = 0; i < n; ++i) {
    in.features.at(i, 0) = inst.nodes[i].x;
    in.features.at(i, 1) = inst.nodes[i].y;
    in.features.at(i, 2) = my.delta_in[i];
    in.features.at(i, 3) = my.delta_out[i];
  }
  in.delta_out_col = Tensor({n});
  in.delta_in_col = Tensor({n});
  for (int i = 0; i < n; ++i) {
    in.delta_out_col.at(static_cast<int64_t>(i)) = my.delta_out[i];
    in.delta_in_col.at(static_cast<int64_t>(i)) = my.delta_in[i];
  }
  in.demand_matrix = my.demand_matrix;
  return in;
}

ad::Var Forward::p(const std::string& name) {
  auto it = bound.find(name);
  if (it != bound.end()) return it->second;
  bool grad = trainable && !store->is_state(name);
  ad::Var v = tape->input(store->at(name), grad);
  bound.emplace(name, v);
  return v;
}

void Forward::collect_grads(std::map<std::string, Tensor>& grads) const {
  for (const auto& [name, var] : bound) {
    if (store->is_state(name) || !tape->requires_grad(var)) continue;
    const Tensor& g = tape->grad(var);
    auto it = grads.find(name);
    if (it == grads.end()) {
      grads.emplace(name, g);
    } else {
      Tensor& acc = it->second;
      for (int64_t i = 0; i < acc.size(); ++i) acc.at(i) += g.at(i);
    }
  }
}

ad::Var embed_inputs(Forward& f, ad::Var features) {
  return linear(f, features, "embed.W", "embed.b");
}

namespace {

ad::Var maybe_quantum(Forward& f, ad::Var x, bool decoder, char proj, int head,
                      const std::string& prefix) {
  if (!f.config->head_quantum(head) || !f.config->quantum_projection(decoder, proj)) return x;
  return f.tape->pyramid_apply(x, f.p(prefix + std::string(".th_") + proj),
                               shared_pairs(f.config->head_dim()));
}

// Attention over `keys_src` rows driven by queries from `query_src`, for one
// head. The additive mask has one row per query.
ad::Var head_attention(Forward& f, ad::Var queries, ad::Var keys, ad::Var values,
                       ad::Var compat_modulation, const Tensor& mask) {
  ad::Tape& t = *f.tape;
  double inv_sqrt_a = 1.0 / std::sqrt(static_cast<double>(f.config->head_dim()));
  ad::Var compat = t.matmul_nt(queries, keys);
  if (compat_modulation.valid()) compat = t.hadamard(compat, compat_modulation);
  compat = t.scale(compat, inv_sqrt_a);
  ad::Var rho = t.softmax_rows(compat, mask);
  return t.matmul(rho, values);
}

}  // namespace

ad::Var encoder_mha(Forward& f, int layer, ad::Var h, const EncodeInputs& inputs) {
  ad::Tape& t = *f.tape;
  const ModelConfig& cfg = *f.config;
  int n = t.value(h).rows();
  Tensor dm = inputs.demand_matrix;
  if (dm.rows() != n || dm.cols() != n)
    throw DimensionError("encoder_mha: demand matrix shape mismatch");
  for (int64_t i = 0; i < dm.size(); ++i) {
    if (dm.at(i) < -1e-9) throw ArgumentError("encoder_mha: demand matrix must be non-negative");
    if (dm.at(i) < 0) dm.at(i) = 0.0;  // numerical dust
  }

  // Constant modulation ingredients shared by all heads of this layer.
  Tensor ones = Tensor::full({n, n}, 1.0);
  Tensor indicator({n, n});
  Tensor log_demand({n, n});
  std::vector<bool> row_has_demand(n, false);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (dm.at(i, j) > 0) {
        indicator.at(i, j) = 1.0;
        log_demand.at(i, j) = std::log(dm.at(i, j));
        row_has_demand[i] = true;
      }

  ad::Var dout = t.input(inputs.delta_out_col, false);
  ad::Var din = t.input(inputs.delta_in_col, false);

  std::string lp = "enc" + std::to_string(layer);
  std::vector<ad::Var> heads;
  for (int s = 0; s < cfg.n_heads; ++s) {
    std::string hp = lp + ".h" + std::to_string(s);
    ad::Var q = t.matmul(h, f.p(hp + ".Wq"));
    ad::Var k = t.matmul(h, f.p(hp + ".Wk"));
    k = t.add(k, t.outer(dout, f.p(hp + ".u_key_out")));
    k = t.add(k, t.outer(din, f.p(hp + ".u_key_in")));
    ad::Var v = t.matmul(h, f.p(hp + ".Wv"));
    v = t.add(v, t.outer(dout, f.p(hp + ".u_val_out")));
    v = t.add(v, t.outer(din, f.p(hp + ".u_val_in")));
    q = maybe_quantum(f, q, false, 'q', s, hp);
    k = maybe_quantum(f, k, false, 'k', s, hp);
    v = maybe_quantum(f, v, false, 'v', s, hp);

    // G^s = A_basic + A_mask M + A_log log D + A_lin D on the demand support.
    ad::Var acoef = f.p(hp + ".A");
    ad::Var g = t.scale_by_scalar(ones, t.entry(acoef, 0, 0));
    g = t.add(g, t.scale_by_scalar(indicator, t.entry(acoef, 0, 1)));
    g = t.add(g, t.scale_by_scalar(log_demand, t.entry(acoef, 0, 2)));
    g = t.add(g, t.scale_by_scalar(dm, t.entry(acoef, 0, 3)));

    // Hard masking where the demand matrix vanishes, active once either
    // masking coefficient is nonzero. Rows without any demand support keep
    // plain compatibility so the softmax stays feasible.
    const Tensor& a_vals = f.store->at(hp + ".A");
    bool mask_active = a_vals.at(0, 1) != 0.0 || a_vals.at(0, 2) != 0.0;
    Tensor mask({n, n});
    if (mask_active) {
      for (int i = 0; i < n; ++i) {
        if (!row_has_demand[i]) continue;
        for (int j = 0; j < n; ++j)
          if (dm.at(i, j) == 0.0) mask.at(i, j) = ad::kMaskSentinel;
      }
    }
    heads.push_back(head_attention(f, q, k, v, g, mask));
  }
  ad::Var merged = t.concat_cols(heads);
  return linear(f, merged, lp + ".Wo", lp + ".bo");
}

namespace {

ad::Var feed_forward(Forward& f, const std::string& lp, ad::Var h) {
  ad::Var z = linear(f, h, lp + ".ff.W1", lp + ".ff.b1");
  z = f.tape->relu(z);
  z = f.tape->dropout(z, f.inference ? 0.0 : f.config->dropout_rate);
  return linear(f, z, lp + ".ff.W2", lp + ".ff.b2");
}

ad::Var batch_norm_layer(Forward& f, const std::string& name, ad::Var x) {
  Tensor& mean = f.bn_state(name + ".mean");
  Tensor& var = f.bn_state(name + ".var");
  return f.tape->batch_norm(x, f.p(name + ".g"), f.p(name + ".b"), mean, var,
                            f.config->bn_momentum, f.config->bn_eps);
}

}  // namespace

ad::Var encode(Forward& f, const EncodeInputs& inputs) {
  ad::Tape& t = *f.tape;
  ad::Var h = embed_inputs(f, t.input(inputs.features, false));
  for (int l = 0; l < ModelConfig::kEncoderLayers; ++l) {
    std::string lp = "enc" + std::to_string(l);
    ad::Var tilde = batch_norm_layer(f, lp + ".bn1", t.add(h, encoder_mha(f, l, h, inputs)));
    h = batch_norm_layer(f, lp + ".bn2", t.add(tilde, feed_forward(f, lp, tilde)));
  }
  return h;
}

ad::Var encode_batch(Forward& f, const std::vector<EncodeInputs>& inputs) {
  if (inputs.empty()) throw ArgumentError("encode_batch: empty batch");
  int n = inputs[0].features.rows();
  for (const auto& in : inputs)
    if (in.features.rows() != n)
      throw DimensionError("encode_batch: instances must share the node count");
  if (inputs.size() == 1) return encode(f, inputs[0]);
  // Normalization statistics are grouped per instance so the encoding of an
  // instance does not depend on the rest of the batch; inference then sees
  // exactly the trained function.
  std::vector<ad::Var> parts;
  for (const auto& in : inputs) parts.push_back(encode(f, in));
  return f.tape->concat_rows(parts);
}

DecodeStep decode_step(Forward& f, ad::Var encoded, const env::EnvState& state, int truck) {
  ad::Tape& t = *f.tape;
  const ModelConfig& cfg = *f.config;
  int n = state.node_count();
  auto mask = state.feasibility_mask(truck);
  bool any_node = false;
  for (int z = 0; z < n; ++z) any_node = any_node || mask[z];

  DecodeStep out;
  if (!any_node) {
    out.forced_end = true;
    out.probs_value.assign(n + 1, 0.0);
    out.probs_value[n] = 1.0;
    return out;
  }

  const env::Truck& tr = state.truck(truck);
  double remaining_out = 0;
  for (double v : state.cached_myopic().delta_out) remaining_out += v;
  Tensor feats = Tensor::matrix(
      1, 3,
      {(tr.capacity - tr.onboard_volume()) / tr.capacity,
       (state.instance().horizon - tr.clock) / state.instance().horizon, remaining_out});

  ad::Var ctx_in =
      t.concat_cols({t.mean_rows(encoded), t.slice_rows(encoded, tr.position, 1),
                     t.input(feats, false)});
  ad::Var ctx = linear(f, ctx_in, "dec.ctx.W", "dec.ctx.b");

  Tensor node_mask({1, n});
  for (int z = 0; z < n; ++z)
    if (!mask[z]) node_mask.at(0, z) = ad::kMaskSentinel;

  // current-state per-node sources for the decoder attention
  const auto& my = state.cached_myopic();
  Tensor eps_col({n}), dout_col({n}), din_col({n});
  for (int i = 0; i < n; ++i) {
    eps_col.at(static_cast<int64_t>(i)) = my.eps[truck][i];
    dout_col.at(static_cast<int64_t>(i)) = my.delta_out[i];
    din_col.at(static_cast<int64_t>(i)) = my.delta_in[i];
  }
  ad::Var eps_v = t.input(eps_col, false);
  ad::Var dout_v = t.input(dout_col, false);
  ad::Var din_v = t.input(din_col, false);

  std::vector<ad::Var> heads;
  for (int s = 0; s < cfg.n_heads; ++s) {
    std::string hp = "dec.h" + std::to_string(s);
    ad::Var q = maybe_quantum(f, t.matmul(ctx, f.p(hp + ".Wq")), true, 'q', s, hp);
    ad::Var k = t.matmul(encoded, f.p(hp + ".Wk"));
    k = t.add(k, t.outer(eps_v, f.p(hp + ".u_key_eps")));
    k = t.add(k, t.outer(dout_v, f.p(hp + ".u_key_out")));
    k = t.add(k, t.outer(din_v, f.p(hp + ".u_key_in")));
    ad::Var v = t.matmul(encoded, f.p(hp + ".Wv"));
    v = t.add(v, t.outer(eps_v, f.p(hp + ".u_val_eps")));
    v = t.add(v, t.outer(dout_v, f.p(hp + ".u_val_out")));
    v = t.add(v, t.outer(din_v, f.p(hp + ".u_val_in")));
    k = maybe_quantum(f, k, true, 'k', s, hp);
    v = maybe_quantum(f, v, true, 'v', s, hp);
    heads.push_back(head_attention(f, q, k, v, ad::Var{-1}, node_mask));
  }
  ad::Var glimpse = linear(f, t.concat_cols(heads), "dec.Wo", "dec.bo");

  ad::Var pq = t.matmul(glimpse, f.p("dec.ptr.Wq"));
  ad::Var keys = t.matmul(t.concat_rows({encoded, f.p("dec.end")}), f.p("dec.ptr.Wk"));
  ad::Var scores = t.scale(t.matmul_nt(pq, keys), 1.0 / std::sqrt(static_cast<double>(cfg.d)));
  // soft clamp: near-identity for moderate scores, bounded at +/- clip
  scores = t.scale(t.tanh(t.scale(scores, 1.0 / cfg.pointer_clip)), cfg.pointer_clip);

  Tensor ptr_mask({1, n + 1});
  for (int z = 0; z < n; ++z)
    if (!mask[z]) ptr_mask.at(0, z) = ad::kMaskSentinel;

  out.probs = t.softmax_rows(scores, ptr_mask);
  const Tensor& pv = t.value(out.probs);
  out.probs_value.assign(pv.data(), pv.data() + n + 1);
  return out;
}

namespace {

int sample_action(const std::vector<double>& probs, StreamRng& rng) {
  double u = rng.uniform();
  double acc = 0;
  int last_positive = -1;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0) continue;
    last_positive = static_cast<int>(i);
    acc += probs[i];
    if (u < acc) return last_positive;
  }
  return last_positive;
}

int greedy_action(const std::vector<double>& probs) {
  int best = 0;
  for (size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = static_cast<int>(i);
  return best;
}

void finish_result(RolloutResult& out, const env::EnvState& state) {
  out.reward = state.reward();
  out.cost = -out.reward;
  out.coverage = state.coverage();
  out.makespan = state.makespan();
  out.logprob = 0;
  for (double p : out.step_probs) out.logprob += std::log(p);
  out.route_log = state.route_log();
  out.fulfilled = state.fulfilled_by_origin();
  out.routes.resize(state.truck_count());
  for (int m = 0; m < state.truck_count(); ++m) out.routes[m] = state.truck(m).route;
}

// Drives the environment to completion, querying the policy at every
// decision. Returns the tape vars of the chosen per-step probabilities.
std::vector<ad::Var> run_episode(Forward& f, ad::Var encoded, env::EnvState& state,
                                 const std::function<int(const DecodeStep&, int)>& choose,
                                 bool want_vars, RolloutResult& out) {
  std::vector<ad::Var> prob_vars;
  while (true) {
    int m = state.active_truck();
    if (m < 0) break;
    auto mask = state.feasibility_mask(m);
    bool any_node = false;
    for (int z = 0; z < state.node_count(); ++z) any_node = any_node || mask[z];
    int action;
    double prob = 1.0;
    if (!any_node) {
      action = state.end_action();
    } else {
      DecodeStep ds = decode_step(f, encoded, state, m);
      action = choose(ds, m);
      prob = ds.probs_value[action];
      if (want_vars) prob_vars.push_back(f.tape->entry(ds.probs, 0, action));
    }
    out.actions.push_back(action);
    out.step_probs.push_back(prob);
    state.apply(m, action);
    if (++out.steps > 100000) throw DivergenceError("episode exceeded the step limit");
  }
  finish_result(out, state);
  return prob_vars;
}

ad::Var build_objective(ad::Tape& tape, const std::vector<ad::Var>& prob_vars,
                        Objective objective) {
  if (prob_vars.empty()) return ad::Var{-1};
  if (objective == Objective::sum_of_logs) {
    ad::Var total = tape.log(prob_vars[0]);
    for (size_t i = 1; i < prob_vars.size(); ++i)
      total = tape.add(total, tape.log(prob_vars[i]));
    return total;
  }
  ad::Var total = prob_vars[0];
  for (size_t i = 1; i < prob_vars.size(); ++i) total = tape.add(total, prob_vars[i]);
  return tape.log(total);
}

}  // namespace

Tensor& Forward::bn_state(const std::string& name) {
  if (state_override) {
    auto it = state_override->find(name);
    if (it == state_override->end())
      it = state_override->emplace(name, store->at(name)).first;
    return it->second;
  }
  return store->at(name);
}

RolloutResult rollout(std::shared_ptr<const env::Instance> instance, ParamStore& store,
                      const ModelConfig& config, DecodeMode mode, uint64_t seed) {
  // inference normalizes with the instance's own statistics, exactly like
  // the training forward; the store's running accumulators stay untouched
  ad::Tape tape(/*training=*/true);
  std::map<std::string, Tensor> bn_copies;
  Forward f{&tape, &config, &store, /*trainable=*/false, {}, &bn_copies, /*inference=*/true};
  env::EnvState state(instance);
  EncodeInputs inputs = EncodeInputs::from_state(state);
  ad::Var encoded = encode(f, inputs);
  StreamRng rng = StreamRng::derive(seed, "actions");
  RolloutResult out;
  auto choose = [&](const DecodeStep& ds, int) {
    return mode == DecodeMode::greedy ? greedy_action(ds.probs_value)
                                      : sample_action(ds.probs_value, rng);
  };
  run_episode(f, encoded, state, choose, /*want_vars=*/false, out);
  return out;
}

ReplayResult replay_logprob(std::shared_ptr<const env::Instance> instance, ParamStore& store,
                            const ModelConfig& config, const std::vector<int>& actions,
                            bool training, bool want_grads, Objective objective) {
  ad::Tape tape(training, /*dropout_seed=*/0);
  std::map<std::string, Tensor> bn_copies;
  Forward f{&tape, &config, &store, want_grads, {}, &bn_copies};
  env::EnvState state(instance);
  EncodeInputs inputs = EncodeInputs::from_state(state);
  ad::Var encoded = encode(f, inputs);
  size_t cursor = 0;
  auto choose = [&](const DecodeStep&, int) -> int {
    if (cursor >= actions.size()) throw ArgumentError("replay: action script exhausted");
    return actions[cursor++];
  };
  RolloutResult out;
  auto prob_vars = run_episode(f, encoded, state, choose, /*want_vars=*/true, out);
  // scripted forced-ends are consumed by the environment loop itself
  for (size_t i = 0; i < out.actions.size(); ++i)
    if (out.actions[i] != actions[i])
      throw ArgumentError("replay: action script diverged from the environment");

  ReplayResult result;
  result.logprob = out.logprob;
  if (want_grads) {
    ad::Var obj = build_objective(tape, prob_vars, objective);
    if (obj.valid()) {
      tape.backward(obj);
      f.collect_grads(result.grads);
    }
  }
  return result;
}

TrainBatch live_batch(const std::vector<std::shared_ptr<const env::Instance>>& instances,
                      ParamStore& store, const ModelConfig& config,
                      const std::vector<uint64_t>& seeds, Objective objective) {
  if (instances.empty() || instances.size() != seeds.size())
    throw ArgumentError("live_batch: instances and seeds must align");
  int batch = static_cast<int>(instances.size());

  TrainBatch tb;
  tb.enc_tape = std::make_unique<ad::Tape>(/*training=*/true,
                                           hash_combine(seeds[0], hash_str("enc-dropout")));
  tb.enc_forward = Forward{tb.enc_tape.get(), &config, &store, /*trainable=*/true, {}, nullptr};

  std::vector<env::EnvState> states;
  states.reserve(batch);
  std::vector<EncodeInputs> inputs;
  for (int i = 0; i < batch; ++i) {
    states.emplace_back(instances[i]);
    inputs.push_back(EncodeInputs::from_state(states[i]));
  }
  int n = instances[0]->node_count();
  tb.nodes_per_instance = n;
  tb.enc_out = encode_batch(tb.enc_forward, inputs);
  const Tensor& enc_val = tb.enc_tape->value(tb.enc_out);

  tb.episodes.resize(batch);
#ifdef QVRP_OPENMP
#pragma omp parallel for schedule(static) num_threads(kernels::worker_count())
#endif
  for (int i = 0; i < batch; ++i) {
    TrainEpisode& ep = tb.episodes[i];
    ep.row0 = i * n;
    ep.tape = std::make_unique<ad::Tape>(/*training=*/true,
                                         hash_combine(seeds[i], hash_str("dec-dropout")));
    ep.forward = Forward{ep.tape.get(), &config, &store, /*trainable=*/true, {}, nullptr};
    Tensor h_val({n, config.d});
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < config.d; ++c) h_val.at(r, c) = enc_val.at(ep.row0 + r, c);
    ep.h_leaf = ep.tape->input(std::move(h_val), /*requires_grad=*/true);
    StreamRng rng = StreamRng::derive(seeds[i], "actions");
    auto choose = [&](const DecodeStep& ds, int) { return sample_action(ds.probs_value, rng); };
    auto prob_vars =
        run_episode(ep.forward, ep.h_leaf, states[i], choose, /*want_vars=*/true, ep.result);
    ep.objective = build_objective(*ep.tape, prob_vars, objective);
    ep.has_objective = ep.objective.valid();
  }
  return tb;
}

std::vector<RolloutResult> greedy_batch(
    const std::vector<std::shared_ptr<const env::Instance>>& instances, ParamStore& store,
    const ModelConfig& config) {
  if (instances.empty()) throw ArgumentError("greedy_batch: empty batch");
  int batch = static_cast<int>(instances.size());
  ad::Tape enc_tape(/*training=*/true);
  std::map<std::string, Tensor> bn_copies;
  Forward enc_forward{&enc_tape, &config, &store, /*trainable=*/false, {}, &bn_copies,
                      /*inference=*/true};

  std::vector<env::EnvState> states;
  states.reserve(batch);
  std::vector<EncodeInputs> inputs;
  for (int i = 0; i < batch; ++i) {
    states.emplace_back(instances[i]);
    inputs.push_back(EncodeInputs::from_state(states[i]));
  }
  int n = instances[0]->node_count();
  ad::Var enc_out = encode_batch(enc_forward, inputs);
  const Tensor& enc_val = enc_tape.value(enc_out);

  std::vector<RolloutResult> results(batch);
#ifdef QVRP_OPENMP
#pragma omp parallel for schedule(static) num_threads(kernels::worker_count())
#endif
  for (int i = 0; i < batch; ++i) {
    ad::Tape tape(/*training=*/true);
    std::map<std::string, Tensor> local_bn;
    Forward f{&tape, &config, &store, /*trainable=*/false, {}, &local_bn, /*inference=*/true};
    Tensor h_val({n, config.d});
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < config.d; ++c) h_val.at(r, c) = enc_val.at(i * n + r, c);
    ad::Var h_leaf = tape.input(std::move(h_val), false);
    auto choose = [&](const DecodeStep& ds, int) { return greedy_action(ds.probs_value); };
    run_episode(f, h_leaf, states[i], choose, /*want_vars=*/false, results[i]);
  }
  return results;
}

void calibrate_batch_norm(ParamStore& store, const ModelConfig& config,
                          const std::vector<std::vector<std::shared_ptr<const env::Instance>>>& batches) {
  for (const auto& batch : batches) {
    if (batch.empty()) continue;
    ad::Tape tape(/*training=*/true);
    Forward f{&tape, &config, &store, /*trainable=*/false, {}, nullptr};
    std::vector<EncodeInputs> inputs;
    for (const auto& inst : batch) {
      env::EnvState state(inst);
      inputs.push_back(EncodeInputs::from_state(state));
    }
    encode_batch(f, inputs);
  }
}

std::map<std::string, Tensor> batch_gradients(TrainBatch& batch,
                                              const std::vector<double>& weights) {
  if (weights.size() != batch.episodes.size())
    throw ArgumentError("batch_gradients: weight count mismatch");
  int total = static_cast<int>(batch.episodes.size());
#ifdef QVRP_OPENMP
#pragma omp parallel for schedule(static) num_threads(kernels::worker_count())
#endif
  for (int i = 0; i < total; ++i) {
    TrainEpisode& ep = batch.episodes[i];
    if (!ep.has_objective || weights[i] == 0.0) continue;
    ep.tape->backward_seeded({{ep.objective, Tensor::scalar(weights[i])}});
  }

  std::map<std::string, Tensor> grads;
  const Tensor& enc_val = batch.enc_tape->value(batch.enc_out);
  Tensor seed(enc_val.shape());
  bool any_seed = false;
  for (int i = 0; i < total; ++i) {
    TrainEpisode& ep = batch.episodes[i];
    if (!ep.has_objective || weights[i] == 0.0) continue;
    ep.forward.collect_grads(grads);
    const Tensor& hg = ep.tape->grad(ep.h_leaf);
    for (int r = 0; r < hg.rows(); ++r)
      for (int c = 0; c < hg.cols(); ++c) seed.at(ep.row0 + r, c) += hg.at(r, c);
    any_seed = true;
  }
  if (any_seed) {
    batch.enc_tape->backward_seeded({{batch.enc_out, seed}});
    batch.enc_forward.collect_grads(grads);
  }
  return grads;
}

uint64_t config_hash(const ModelConfig& config) {
  return hash_str(config.to_json().dump());
}

void save_checkpoint(const std::string& prefix, const ParamStore& store,
                     const ModelConfig& config, const nlohmann::json& extra) {
  nlohmann::json manifest;
  manifest["model"] = config.to_json();
  manifest["config_hash"] = config_hash(config);
  manifest["extra"] = extra;
  nlohmann::json tensors = nlohmann::json::array();
  int64_t offset = 0;
  for (const auto& [name, t] : store.values) {
    tensors.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"offset", offset},
                       {"count", t.size()},
                       {"state", store.is_state(name)}});
    offset += t.size();
  }
  manifest["tensors"] = tensors;

  std::ofstream mj(prefix + ".json");
  if (!mj) throw ArgumentError("cannot write checkpoint manifest: " + prefix + ".json");
  mj << manifest.dump(2) << '\n';

  std::ofstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw ArgumentError("cannot write checkpoint blob: " + prefix + ".bin");
  for (const auto& [name, t] : store.values)
    bin.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Checkpoint load_checkpoint(const std::string& prefix) {
  std::ifstream mj(prefix + ".json");
  if (!mj) throw IncompatibleArtifactError("cannot read checkpoint manifest: " + prefix + ".json");
  nlohmann::json manifest;
  mj >> manifest;

  Checkpoint ck;
  ck.config = ModelConfig::from_json(manifest.at("model"));
  ck.extra = manifest.value("extra", nlohmann::json::object());
  if (manifest.value("config_hash", uint64_t{0}) != config_hash(ck.config))
    throw IncompatibleArtifactError("checkpoint config hash mismatch");

  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw IncompatibleArtifactError("cannot read checkpoint blob: " + prefix + ".bin");
  for (const auto& tj : manifest.at("tensors")) {
    std::string name = tj.at("name").get<std::string>();
    std::vector<int> shape = tj.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    bin.read(reinterpret_cast<char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!bin) throw IncompatibleArtifactError("checkpoint blob truncated");
    if (tj.value("state", false))
      ck.store.add_state(name, std::move(t));
    else
      ck.store.add_param(name, std::move(t));
  }
  return ck;
}

}  // namespace qvrp::policy
