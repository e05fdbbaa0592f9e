#include "qvrp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qvrp/errors.hpp"
#include "qvrp/kernels.hpp"
#include "qvrp/rng.hpp"
#include "qvrp/stats.hpp"

namespace qvrp::train {

void SamplerSpec::validate() const {
  if (n_nodes < 1 || n_trucks < 1 || n_tuples < 0)
    throw ConfigError("sampler: counts must be positive");
  if (n_tuples > 0 && n_nodes < 2) throw ConfigError("sampler: demand needs at least two nodes");
  if (p_rank3 > 0 && n_nodes < 3) throw ConfigError("sampler: rank-3 demand needs three nodes");
  if (!(capacity > 0) || !(horizon > 0) || !(time_scale > 0))
    throw ConfigError("sampler: capacity, horizon and time scale must be positive");
  if (p_rank3 < 0 || p_rank3 > 1 || cyclic_fraction < 0 || cyclic_fraction > 1)
    throw ConfigError("sampler: fractions must lie in [0,1]");
  if (!(vol_min > 0) || clip < vol_min)
    throw ConfigError("sampler: volume range is empty");
  if (unmet_penalty < 0) throw ConfigError("sampler: unmet penalty must be non-negative");
}

nlohmann::json SamplerSpec::to_json() const {
  return nlohmann::json{
      {"n_nodes", n_nodes},         {"n_trucks", n_trucks},
      {"capacity", capacity},       {"horizon_s", horizon},
      {"time_scale", time_scale},   {"n_tuples", n_tuples},
      {"p_rank3", p_rank3},         {"cyclic_fraction", cyclic_fraction},
      {"vol_min", vol_min},         {"clip", clip},
      {"unmet_penalty", unmet_penalty},
  };
}

SamplerSpec SamplerSpec::from_json(const nlohmann::json& j) {
  SamplerSpec s;
  s.n_nodes = j.value("n_nodes", s.n_nodes);
  s.n_trucks = j.value("n_trucks", s.n_trucks);
  s.capacity = j.value("capacity", s.capacity);
  s.horizon = j.value("horizon_s", s.horizon);
  s.time_scale = j.value("time_scale", s.time_scale);
  s.n_tuples = j.value("n_tuples", s.n_tuples);
  s.p_rank3 = j.value("p_rank3", s.p_rank3);
  s.cyclic_fraction = j.value("cyclic_fraction", s.cyclic_fraction);
  s.vol_min = j.value("vol_min", s.vol_min);
  s.clip = j.value("clip", s.clip);
  s.unmet_penalty = j.value("unmet_penalty", s.unmet_penalty);
  s.validate();
  return s;
}

void TrainConfig::validate() const {
  if (num_epochs < 1 || batch_size < 1 || batches_per_epoch < 1 || eval_set_size < 1)
    throw ConfigError("train: counts must be at least 1");
  if (!(learning_rate > 0)) throw ConfigError("train: learning rate must be positive");
  if (!(baseline_significance > 0) || !(baseline_significance < 1))
    throw ConfigError("train: significance must lie in (0,1)");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint interval must be non-negative");
  sampler.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{
      {"num_epochs", num_epochs},
      {"batch_size", batch_size},
      {"batches_per_epoch", batches_per_epoch},
      {"learning_rate", learning_rate},
      {"baseline_significance", baseline_significance},
      {"eval_set_size", eval_set_size},
      {"sampler", sampler.to_json()},
      {"seed", seed},
      {"checkpoint_every", checkpoint_every},
      {"objective", objective == policy::Objective::sum_of_logs ? "sum_of_logs" : "log_of_sum"},
  };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.num_epochs = j.value("num_epochs", c.num_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.batches_per_epoch = j.value("batches_per_epoch", c.batches_per_epoch);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.baseline_significance = j.value("baseline_significance", c.baseline_significance);
  c.eval_set_size = j.value("eval_set_size", c.eval_set_size);
  if (j.contains("sampler")) c.sampler = SamplerSpec::from_json(j.at("sampler"));
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  std::string obj = j.value("objective", std::string("sum_of_logs"));
  if (obj == "sum_of_logs")
    c.objective = policy::Objective::sum_of_logs;
  else if (obj == "log_of_sum")
    c.objective = policy::Objective::log_of_sum;
  else
    throw ConfigError("train: unknown objective " + obj);
  c.validate();
  return c;
}

std::shared_ptr<env::Instance> sample_instance(const SamplerSpec& spec, uint64_t seed) {
  spec.validate();
  StreamRng rng(seed);
  auto inst = std::make_shared<env::Instance>();
  int n = spec.n_nodes;
  for (int i = 0; i < n; ++i)
    inst->nodes.push_back({i, "NODE_" + std::to_string(i), rng.uniform(), rng.uniform()});
  inst->time_matrix.assign(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double dx = inst->nodes[i].x - inst->nodes[j].x;
      double dy = inst->nodes[i].y - inst->nodes[j].y;
      double t = std::max(std::sqrt(dx * dx + dy * dy), 0.01) * spec.time_scale;
      inst->time_matrix[i][j] = t;
      inst->time_matrix[j][i] = t;
    }
  for (int m = 0; m < spec.n_trucks; ++m) inst->trucks.push_back({spec.capacity, -1});
  inst->horizon = spec.horizon;
  inst->unmet_penalty = spec.unmet_penalty;
  for (int t = 0; t < spec.n_tuples; ++t) {
    env::DemandEntry d;
    d.kind = rng.uniform() < spec.cyclic_fraction ? env::DemandKind::cyclic
                                                  : env::DemandKind::direct;
    int rank = rng.uniform() < spec.p_rank3 ? 3 : 2;
    d.nodes.len = rank;
    for (int i = 0; i < rank; ++i) {
      int node;
      bool again;
      do {
        node = static_cast<int>(rng.below(n));
        again = (i > 0 && node == d.nodes.v[i - 1]) ||
                (d.kind == env::DemandKind::cyclic && i == rank - 1 && node == d.nodes.v[0]);
      } while (again);
      d.nodes.v[i] = node;
    }
    d.volume = rng.uniform(spec.vol_min, spec.clip);
    inst->demand.push_back(d);
  }
  inst->validate();
  return inst;
}

void descent(policy::ParamStore& store, const std::map<std::string, Tensor>& grads,
             AdamState& adam, double learning_rate) {
  ++adam.t;
  double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.t));
  double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.t));
  for (const auto& name : store.param_names()) {
    Tensor& theta = store.at(name);
    auto git = grads.find(name);
    auto mit = adam.m.find(name);
    if (mit == adam.m.end()) {
      mit = adam.m.emplace(name, Tensor(theta.shape())).first;
      adam.v.emplace(name, Tensor(theta.shape()));
    }
    Tensor& m = mit->second;
    Tensor& v = adam.v.at(name);
    for (int64_t i = 0; i < theta.size(); ++i) {
      double g = git != grads.end() ? git->second.at(i) : 0.0;
      m.at(i) = adam.beta1 * m.at(i) + (1 - adam.beta1) * g;
      v.at(i) = adam.beta2 * v.at(i) + (1 - adam.beta2) * g * g;
      double mhat = m.at(i) / bc1;
      double vhat = v.at(i) / bc2;
      theta.at(i) -= learning_rate * mhat / (std::sqrt(vhat) + adam.eps);
    }
  }
}

namespace {

std::vector<double> greedy_costs(policy::ParamStore& store, const policy::ModelConfig& model,
                                 const std::vector<std::shared_ptr<const env::Instance>>& set) {
  std::vector<double> costs(set.size(), 0.0);
  int total = static_cast<int>(set.size());
#ifdef QVRP_OPENMP
#pragma omp parallel for schedule(static) num_threads(kernels::worker_count())
#endif
  for (int i = 0; i < total; ++i)
    costs[i] = policy::rollout(set[i], store, model, policy::DecodeMode::greedy, 0).cost;
  return costs;
}

void check_finite(const std::map<std::string, Tensor>& grads, int epoch, int batch) {
  for (const auto& [name, g] : grads)
    for (int64_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g.at(i)))
        throw DivergenceError("training diverged: non-finite gradient for " + name +
                              " at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch));
}

}  // namespace

bool baseline_test(policy::ParamStore& live, policy::ParamStore& baseline,
                   const policy::ModelConfig& model,
                   const std::vector<std::shared_ptr<const env::Instance>>& eval_set,
                   double significance) {
  if (eval_set.empty()) throw ArgumentError("baseline_test: empty eval set");
  auto live_costs = greedy_costs(live, model, eval_set);
  auto base_costs = greedy_costs(baseline, model, eval_set);
  auto test = stats::paired_t_test(base_costs, live_costs);  // H1: baseline costs more
  return test.p_one_sided < significance;
}

TrainResult train(const TrainConfig& config, const policy::ModelConfig& model,
                  policy::ParamStore initial, const EpochCallback& on_epoch) {
  config.validate();
  model.validate();

  TrainResult result;
  result.params = std::move(initial);
  policy::ParamStore baseline = result.params;
  AdamState adam;

  std::vector<std::shared_ptr<const env::Instance>> eval_set;
  for (int i = 0; i < config.eval_set_size; ++i)
    eval_set.push_back(sample_instance(
        config.sampler, hash_combine(config.seed, hash_str("eval")) + i));

  std::vector<double> seen_volumes;
  for (int e = 1; e <= config.num_epochs; ++e) {
    double cost_sum = 0, cov_sum = 0, time_sum = 0;
    long rollouts = 0;
    for (int b = 1; b <= config.batches_per_epoch; ++b) {
      std::vector<std::shared_ptr<const env::Instance>> instances;
      std::vector<uint64_t> seeds;
      for (int i = 0; i < config.batch_size; ++i) {
        uint64_t s = hash_combine(config.seed, hash_str("inst"));
        s = hash_combine(s, static_cast<uint64_t>(e));
        s = hash_combine(s, static_cast<uint64_t>(b));
        s = hash_combine(s, static_cast<uint64_t>(i));
        instances.push_back(sample_instance(config.sampler, s));
        for (const auto& d : instances.back()->demand) seen_volumes.push_back(d.volume);
        uint64_t ls = hash_combine(config.seed, hash_str("live"));
        ls = hash_combine(ls, static_cast<uint64_t>(e));
        ls = hash_combine(ls, static_cast<uint64_t>(b));
        ls = hash_combine(ls, static_cast<uint64_t>(i));
        seeds.push_back(ls);
      }

      policy::TrainBatch batch =
          policy::live_batch(instances, result.params, model, seeds, config.objective);
      // baseline rollouts run under the same batched normalization regime as
      // the sampled episodes, so the advantage reflects policy differences
      auto base = policy::greedy_batch(instances, baseline, model);

      std::vector<double> weights(instances.size());
      for (size_t i = 0; i < instances.size(); ++i) {
        const auto& r = batch.episodes[i].result;
        if (!std::isfinite(r.cost))
          throw DivergenceError("training diverged: non-finite episode cost");
        weights[i] = (r.cost - base[i].cost) / static_cast<double>(instances.size());
        cost_sum += r.cost;
        cov_sum += r.coverage;
        time_sum += r.makespan;
        ++rollouts;
      }
      auto grads = policy::batch_gradients(batch, weights);
      check_finite(grads, e, b);
      descent(result.params, grads, adam, config.learning_rate);
    }

    bool updated = baseline_test(result.params, baseline, model, eval_set,
                                 config.baseline_significance);
    if (updated) baseline = result.params;

    EpochMetrics em;
    em.epoch = e;
    em.mean_cost = cost_sum / rollouts;
    em.mean_coverage = cov_sum / rollouts;
    em.mean_time_s = time_sum / rollouts;
    em.baseline_updated = updated;
    result.metrics.push_back(em);
    if (on_epoch) on_epoch(em, result.params);
  }

  // Deploy the quality-gated parameters when the final live set regressed
  // past them: the baseline only ever absorbs significantly better policies,
  // so it tracks the best evaluated point of the run.
  {
    auto live_costs = greedy_costs(result.params, model, eval_set);
    auto base_costs = greedy_costs(baseline, model, eval_set);
    double live_mean = 0, base_mean = 0;
    for (size_t i = 0; i < eval_set.size(); ++i) {
      live_mean += live_costs[i];
      base_mean += base_costs[i];
    }
    if (base_mean < live_mean) result.params = baseline;
  }

  // settle the running statistics on the final policy's activations
  std::vector<std::vector<std::shared_ptr<const env::Instance>>> calib;
  for (int k = 0; k < 32; ++k) {
    std::vector<std::shared_ptr<const env::Instance>> batch;
    for (int i = 0; i < config.batch_size; ++i) {
      uint64_t s = hash_combine(config.seed, hash_str("bn-calibration"));
      s = hash_combine(s, static_cast<uint64_t>(k));
      s = hash_combine(s, static_cast<uint64_t>(i));
      batch.push_back(sample_instance(config.sampler, s));
    }
    calib.push_back(std::move(batch));
  }
  policy::calibrate_batch_norm(result.params, model, calib);

  result.clip_default =
      seen_volumes.empty() ? config.sampler.clip : stats::percentile(seen_volumes, 0.95);
  return result;
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::ostringstream out;
  out.precision(12);
  out << "epoch,mean_cost,mean_coverage,mean_time_s,baseline_updated\n";
  for (const auto& m : metrics)
    out << m.epoch << ',' << m.mean_cost << ',' << m.mean_coverage << ',' << m.mean_time_s
        << ',' << (m.baseline_updated ? 1 : 0) << '\n';
  return out.str();
}

}  // namespace qvrp::train
