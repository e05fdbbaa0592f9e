#include "qvrp/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "qvrp/errors.hpp"
#include "qvrp/kernels.hpp"

namespace qvrp::orch {

namespace {

constexpr double kVolumeEps = 1e-9;

const char* kEightSiteNames[8] = {
    "NISHIO CROSS-DOCKING", "NO.1 AND 2 PLANT", "OKAZAKI AND ELECTRIC PLANT",
    "OKAZAKI EAST PLANT",   "TAHARA PLANT",     "GAMAGORI PLANT",
    "KIRA PLANT",           "MEIKO",
};

}  // namespace

void SubsetSearchConfig::validate(int total_nodes) const {
  if (n_prime < 2) throw ArgumentError("subset search: n' must be at least 2");
  if (total_nodes > 0 && n_prime > total_nodes)
    throw ArgumentError("subset search: n' exceeds the node count");
  if (n_trucks_prime < 1 || k_node_draws < 1 || k_subset_attempts < 1 ||
      k_execution_trials < 1 || max_iterations < 1)
    throw ArgumentError("subset search: counts must be at least 1");
  if (!(truck_capacity > 0) || !(horizon > 0))
    throw ArgumentError("subset search: capacity and horizon must be positive");
  if (clip < 0) throw ArgumentError("subset search: clip must be non-negative");
}

nlohmann::json SubsetSearchConfig::to_json() const {
  return nlohmann::json{
      {"n_prime", n_prime},
      {"n_trucks_prime", n_trucks_prime},
      {"k_node_draws", k_node_draws},
      {"k_subset_attempts", k_subset_attempts},
      {"k_execution_trials", k_execution_trials},
      {"clip", clip},
      {"truck_capacity", truck_capacity},
      {"horizon_s", horizon},
      {"max_iterations", max_iterations},
      {"seed", seed},
  };
}

SubsetSearchConfig SubsetSearchConfig::from_json(const nlohmann::json& j) {
  SubsetSearchConfig c;
  c.n_prime = j.value("n_prime", c.n_prime);
  c.n_trucks_prime = j.value("n_trucks_prime", c.n_trucks_prime);
  c.k_node_draws = j.value("k_node_draws", c.k_node_draws);
  c.k_subset_attempts = j.value("k_subset_attempts", c.k_subset_attempts);
  c.k_execution_trials = j.value("k_execution_trials", c.k_execution_trials);
  c.clip = j.value("clip", c.clip);
  c.truck_capacity = j.value("truck_capacity", c.truck_capacity);
  c.horizon = j.value("horizon_s", c.horizon);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.seed = j.value("seed", c.seed);
  return c;
}

DemandPool pool_from_instance(const env::Instance& instance) {
  DemandPool pool;
  for (const auto& d : instance.demand) pool[{d.nodes, d.kind}] += d.volume;
  return pool;
}

double pool_total(const DemandPool& pool) {
  double total = 0;
  for (const auto& [key, v] : pool) total += v;
  return total;
}

std::vector<int> draw_node_subset(const DemandPool& pool, int total_nodes, int n_prime,
                                  StreamRng& rng) {
  if (n_prime > total_nodes) throw ArgumentError("draw_node_subset: n' exceeds the node count");
  std::vector<const env::OriginKey*> tuples;
  for (const auto& [key, v] : pool)
    if (v > kVolumeEps) tuples.push_back(&key);
  if (tuples.empty()) throw ArgumentError("draw_node_subset: demand pool is empty");

  std::set<int> chosen;
  while (!tuples.empty() && static_cast<int>(chosen.size()) < n_prime) {
    size_t pick = rng.below(tuples.size());
    const env::OriginKey* key = tuples[pick];
    tuples.erase(tuples.begin() + static_cast<long>(pick));
    std::vector<int> added;
    for (int i = 0; i < key->nodes.len; ++i)
      if (!chosen.count(key->nodes.v[i])) added.push_back(key->nodes.v[i]);
    if (static_cast<int>(chosen.size() + added.size()) > n_prime) continue;  // overshoot: drop it
    chosen.insert(added.begin(), added.end());
  }
  // pad with uniformly random outside nodes
  while (static_cast<int>(chosen.size()) < n_prime) {
    std::vector<int> outside;
    for (int z = 0; z < total_nodes; ++z)
      if (!chosen.count(z)) outside.push_back(z);
    chosen.insert(outside[rng.below(outside.size())]);
  }
  return {chosen.begin(), chosen.end()};
}

SubInstance build_sub_instance(const env::Instance& full, const std::vector<int>& subset,
                               const DemandPool& pool, const SubsetSearchConfig& config) {
  if (config.clip <= 0) throw ArgumentError("build_sub_instance: clip is unresolved");
  SubInstance sub;
  sub.nodes = subset;
  auto inst = std::make_shared<env::Instance>();
  int n = static_cast<int>(subset.size());
  std::map<int, int> local;
  for (int i = 0; i < n; ++i) {
    local[subset[i]] = i;
    const auto& node = full.nodes[subset[i]];
    inst->nodes.push_back({node.id, node.name, node.x, node.y});
  }
  inst->time_matrix.assign(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) inst->time_matrix[i][j] = full.travel(subset[i], subset[j]);
  for (int m = 0; m < config.n_trucks_prime; ++m)
    inst->trucks.push_back({config.truck_capacity, -1});
  inst->horizon = config.horizon;

  for (const auto& [key, volume] : pool) {
    if (volume <= kVolumeEps) continue;
    bool inside = true;
    for (int i = 0; i < key.nodes.len && inside; ++i) inside = local.count(key.nodes.v[i]) > 0;
    if (!inside) continue;
    env::DemandEntry d;
    d.kind = key.kind;
    d.nodes.len = key.nodes.len;
    for (int i = 0; i < key.nodes.len; ++i) d.nodes.v[i] = local.at(key.nodes.v[i]);
    d.volume = std::min(volume, config.clip);
    inst->demand.push_back(d);
    sub.origin_map[{d.nodes, d.kind}] = key;
    sub.clipped_total += d.volume;
  }
  inst->validate();
  sub.instance = inst;
  return sub;
}

SubsetChoice select_best_subset(const env::Instance& full, const DemandPool& pool,
                                policy::ParamStore& agent, const policy::ModelConfig& model,
                                const SubsetSearchConfig& config, uint64_t seed) {
  StreamRng draw_rng = StreamRng::derive(seed, "subset-draws");
  std::vector<std::vector<int>> candidates;
  for (int d = 0; d < config.k_node_draws; ++d)
    candidates.push_back(draw_node_subset(pool, full.node_count(), config.n_prime, draw_rng));

  std::vector<SubInstance> subs(candidates.size());
  for (size_t c = 0; c < candidates.size(); ++c)
    subs[c] = build_sub_instance(full, candidates[c], pool, config);

  int attempts = config.k_subset_attempts;
  std::vector<double> coverage(candidates.size() * attempts, 0.0);
  int total = static_cast<int>(coverage.size());
#ifdef QVRP_OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(kernels::worker_count())
#endif
  for (int idx = 0; idx < total; ++idx) {
    int c = idx / attempts;
    auto r = policy::rollout(subs[c].instance, agent, model, policy::DecodeMode::sample,
                             hash_combine(seed, 1000 + idx));
    coverage[idx] = r.coverage;
  }

  SubsetChoice best;
  double best_mean = -1.0;
  for (size_t c = 0; c < candidates.size(); ++c) {
    double mean = 0;
    std::vector<double> atts;
    for (int a = 0; a < attempts; ++a) {
      mean += coverage[c * attempts + a];
      atts.push_back(coverage[c * attempts + a]);
    }
    mean /= attempts;
    if (mean > best_mean + 1e-15) {
      best_mean = mean;
      best.nodes = candidates[c];
      best.mean_coverage = mean;
      best.attempt_coverages = atts;
    }
  }
  return best;
}

namespace {

// Deterministic rescue subset: nodes of the remaining tuples by volume, then
// the nearest neighbours of what was gathered.
std::vector<int> fallback_subset(const env::Instance& full, const DemandPool& pool,
                                 int n_prime) {
  std::vector<std::pair<double, const env::OriginKey*>> by_volume;
  for (const auto& [key, v] : pool)
    if (v > kVolumeEps) by_volume.emplace_back(v, &key);
  std::sort(by_volume.begin(), by_volume.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return *a.second < *b.second;
  });
  std::set<int> chosen;
  for (const auto& [v, key] : by_volume) {
    std::vector<int> added;
    for (int i = 0; i < key->nodes.len; ++i)
      if (!chosen.count(key->nodes.v[i])) added.push_back(key->nodes.v[i]);
    if (static_cast<int>(chosen.size() + added.size()) > n_prime) continue;
    chosen.insert(added.begin(), added.end());
  }
  while (static_cast<int>(chosen.size()) < n_prime) {
    int best = -1;
    double best_t = 0;
    for (int z = 0; z < full.node_count(); ++z) {
      if (chosen.count(z)) continue;
      double nearest = std::numeric_limits<double>::max();
      for (int c : chosen) nearest = std::min(nearest, full.travel(c, z));
      if (chosen.empty()) nearest = 0;
      if (best < 0 || nearest < best_t) {
        best = z;
        best_t = nearest;
      }
    }
    chosen.insert(best);
  }
  return {chosen.begin(), chosen.end()};
}

}  // namespace

ExecutionResult execution_loop(const env::Instance& full, policy::ParamStore& agent,
                               const policy::ModelConfig& model,
                               const SubsetSearchConfig& config) {
  config.validate(full.node_count());
  if (config.clip <= 0) throw ArgumentError("execution_loop: clip is unresolved");
  DemandPool pool = pool_from_instance(full);

  ExecutionResult result;
  result.initial_volume = pool_total(pool);
  int zero_streak = 0;
  while (pool_total(pool) > kVolumeEps) {
    if (result.iterations >= config.max_iterations)
      throw StagnationError("execution loop hit the iteration cap with demand remaining");
    ++result.iterations;
    uint64_t iter_seed = hash_combine(config.seed, static_cast<uint64_t>(result.iterations));

    std::vector<int> subset =
        zero_streak >= 2 ? fallback_subset(full, pool, config.n_prime)
                         : select_best_subset(full, pool, agent, model, config, iter_seed).nodes;
    SubInstance sub = build_sub_instance(full, subset, pool, config);

    // best of k execution trials by coverage
    std::vector<policy::RolloutResult> trials(config.k_execution_trials);
    int total = config.k_execution_trials;
#ifdef QVRP_OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(kernels::worker_count())
#endif
    for (int t = 0; t < total; ++t)
      trials[t] = policy::rollout(sub.instance, agent, model, policy::DecodeMode::sample,
                                  hash_combine(iter_seed, 7000 + t));
    int best = 0;
    for (int t = 1; t < total; ++t)
      if (trials[t].coverage > trials[best].coverage + 1e-15) best = t;
    const policy::RolloutResult& chosen = trials[best];

    TeamRoutes team;
    team.subset = subset;
    team.capacity = config.truck_capacity;
    team.clip = config.clip;
    team.coverage = chosen.coverage;
    team.route_log = chosen.route_log;
    team.routes.resize(chosen.routes.size());
    team.starts.resize(chosen.routes.size());
    for (size_t m = 0; m < chosen.routes.size(); ++m) {
      team.starts[m] = subset[sub.instance->start_of(static_cast<int>(m))];
      for (int z : chosen.routes[m]) team.routes[m].push_back(subset[z]);
    }
    for (const auto& [local_origin, volume] : chosen.fulfilled) {
      auto it = sub.origin_map.find(local_origin);
      if (it == sub.origin_map.end())
        throw ArgumentError("execution_loop: fulfilled tuple missing from the origin map");
      double take = std::min(volume, pool[it->second]);
      pool[it->second] -= take;
      if (pool[it->second] <= kVolumeEps) pool.erase(it->second);
      team.fulfilled[it->second] += take;
      team.fulfilled_volume += take;
    }
    result.fulfilled_volume += team.fulfilled_volume;
    result.teams.push_back(std::move(team));

    if (result.teams.back().fulfilled_volume <= kVolumeEps) {
      if (++zero_streak >= 3)
        throw StagnationError("execution loop made no progress in three consecutive iterations");
    } else {
      zero_streak = 0;
    }
  }
  result.trucks_used = result.iterations * config.n_trucks_prime;
  result.fulfillment_fraction =
      result.initial_volume > 0 ? result.fulfilled_volume / result.initial_volume : 1.0;
  return result;
}

void ShiftConfig::validate() const {
  if (!(0 <= shift1_start && shift1_start < shift1_end && shift1_end <= shift2_start &&
        shift2_start < shift2_end && shift2_end <= day))
    throw ArgumentError("shift config: windows must be ordered within the day");
}

nlohmann::json ShiftConfig::to_json() const {
  return nlohmann::json{{"shift1_start_s", shift1_start},
                        {"shift1_end_s", shift1_end},
                        {"shift2_start_s", shift2_start},
                        {"shift2_end_s", shift2_end},
                        {"day_s", day}};
}

ShiftConfig ShiftConfig::from_json(const nlohmann::json& j) {
  ShiftConfig c;
  c.shift1_start = j.value("shift1_start_s", c.shift1_start);
  c.shift1_end = j.value("shift1_end_s", c.shift1_end);
  c.shift2_start = j.value("shift2_start_s", c.shift2_start);
  c.shift2_end = j.value("shift2_end_s", c.shift2_end);
  c.day = j.value("day_s", c.day);
  c.validate();
  return c;
}

double next_departure(const ShiftConfig& shifts, double t, double duration) {
  double win1 = shifts.shift1_end - shifts.shift1_start;
  double win2 = shifts.shift2_end - shifts.shift2_start;
  if (duration > win1 && duration > win2)
    throw ArgumentError("shift windows are too short for this move");
  double day_start = std::floor(t / shifts.day) * shifts.day;
  for (int d = 0; d < 3; ++d) {
    for (auto [ws, we] : {std::pair{shifts.shift1_start, shifts.shift1_end},
                          std::pair{shifts.shift2_start, shifts.shift2_end}}) {
      double start = day_start + ws, end = day_start + we;
      double dep = std::max(t, start);
      if (dep + duration <= end + 1e-9) return dep;
    }
    day_start += shifts.day;
  }
  throw ArgumentError("no reachable driving window");  // unreachable given the guard above
}

double next_window_start(const ShiftConfig& shifts, double t) {
  double day_start = std::floor(t / shifts.day) * shifts.day;
  for (int d = 0; d < 3; ++d) {
    for (double ws : {shifts.shift1_start, shifts.shift2_start}) {
      double start = day_start + ws;
      if (start >= t - 1e-9) return start;
    }
    day_start += shifts.day;
  }
  return day_start;  // unreachable
}

namespace {

struct Box {
  int id = 0;
  double volume = 0.0;
  env::NodeTuple remaining;  // head: location when off-board, next stop on-board
  env::NodeTuple origin;
  env::DemandKind kind = env::DemandKind::cyclic;
  int location = -1;  // node id; -1 while on a truck
  int truck = -1;     // global truck id; -1 when off-board
  bool fulfilled = false;
  bool visible = true;  // within the active team's subset and clip budget

  bool compact_cyclic() const { return kind == env::DemandKind::cyclic && remaining == origin; }
};

struct SimTruck {
  int global_id = 0;
  double clock = 0.0;
  int position = -1;
  double capacity = 0.0;
  double load = 0.0;
  size_t cursor = 0;
  const std::vector<int>* route = nullptr;
};

void arrive_boxes(std::vector<Box>& boxes, SimTruck& truck, double now,
                  double& fulfilled_volume, long& fulfilled_count) {
  int z = truck.position;
  // pickup candidates before unloading: freshly dropped boxes wait for a
  // later visit
  std::vector<int> candidates;
  for (const auto& b : boxes)
    if (!b.fulfilled && b.visible && b.truck < 0 && b.location == z) candidates.push_back(b.id);

  for (auto& b : boxes) {
    if (b.truck != truck.global_id || b.remaining.head() != z) continue;
    b.truck = -1;
    truck.load -= b.volume;
    if (b.remaining.len == 1) {
      b.fulfilled = true;
      b.location = z;
      fulfilled_volume += b.volume;
      ++fulfilled_count;
    } else {
      b.location = z;  // remaining tuple already has this node at its head
    }
  }

  // group candidates by flow entry, mirroring the tensor-level ordering
  struct Entry {
    env::FlowKey key;
    double volume = 0.0;
    std::vector<int> ids;
  };
  std::map<env::FlowKey, Entry> entries;
  for (int id : candidates) {
    const Box& b = boxes[id];
    env::FlowKey key{b.remaining, b.origin, b.kind};
    Entry& e = entries[key];
    e.key = key;
    e.volume += b.volume;
    e.ids.push_back(id);
  }
  std::vector<Entry> order;
  for (auto& [key, e] : entries) order.push_back(std::move(e));
  std::sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
    if (a.volume != b.volume) return a.volume > b.volume;
    return a.key < b.key;
  });
  double spare = truck.capacity - truck.load;
  for (const Entry& e : order) {
    for (int id : e.ids) {
      Box& b = boxes[id];
      if (b.volume > spare + 1e-12) continue;
      b.remaining = b.compact_cyclic() ? b.origin.rotated() : b.remaining.tail();
      b.location = -1;
      b.truck = truck.global_id;
      truck.load += b.volume;
      spare -= b.volume;
    }
  }
  (void)now;
}

}  // namespace

FullScaleReport simulate_full_scale(const env::Instance& full,
                                    const std::vector<env::BoxGroup>& groups,
                                    const ExecutionResult& routes, const ShiftConfig& shifts) {
  shifts.validate();
  FullScaleReport report;

  std::vector<Box> boxes;
  for (const auto& g : groups) {
    for (int i = 0; i < g.nodes.len; ++i)
      if (g.nodes.v[i] < 0 || g.nodes.v[i] >= full.node_count())
        throw ArgumentError("simulate_full_scale: box group references an unknown node");
    for (long c = 0; c < g.count; ++c) {
      Box b;
      b.id = static_cast<int>(boxes.size());
      b.volume = g.box_volume;
      b.remaining = g.nodes;
      b.origin = g.nodes;
      b.kind = g.kind;
      b.location = g.nodes.head();
      boxes.push_back(b);
      report.total_volume += g.box_volume;
    }
  }
  report.boxes_total = static_cast<long>(boxes.size());

  auto record_share = [&](double t, const std::vector<SimTruck>& trucks) {
    double onboard = 0;
    for (const auto& tr : trucks) onboard += tr.load;
    report.share.push_back({t, onboard,
                            report.total_volume > 0
                                ? report.fulfilled_volume / report.total_volume
                                : 1.0});
  };

  double team_clock = 0.0;
  for (size_t team_idx = 0; team_idx < routes.teams.size(); ++team_idx) {
    const TeamRoutes& team = routes.teams[team_idx];
    // each team leaves from the start of a fresh driving window, so a
    // sub-episode that fits inside one window runs without mid-route waits
    double team_start = next_window_start(shifts, team_clock);

    // The team's plan was computed against the clipped sub-instance: only
    // boxes of requirements fully inside its subset are serviceable, and at
    // most `clip` volume per requirement.
    std::set<int> subset(team.subset.begin(), team.subset.end());
    std::map<env::OriginKey, double> budget;
    for (auto& b : boxes) {
      if (b.fulfilled) continue;
      bool inside = true;
      for (int i = 0; i < b.origin.len && inside; ++i) inside = subset.count(b.origin.v[i]) > 0;
      if (!inside) {
        b.visible = false;
        continue;
      }
      if (team.clip > 0) {
        double& left = budget.try_emplace({b.origin, b.kind}, team.clip).first->second;
        b.visible = b.volume <= left + 1e-12;
        if (b.visible) left -= b.volume;
      } else {
        b.visible = true;
      }
    }
    std::vector<Box> snapshot = boxes;

    std::vector<SimTruck> trucks(team.routes.size());
    for (size_t m = 0; m < team.routes.size(); ++m) {
      trucks[m].global_id = static_cast<int>(team_idx * team.routes.size() + m);
      trucks[m].clock = team_start;
      trucks[m].position = team.starts[m];
      trucks[m].capacity = team.capacity;
      trucks[m].route = &team.routes[m];
    }

    // service the starting nodes in truck order, as the environment does
    for (auto& tr : trucks)
      arrive_boxes(boxes, tr, tr.clock, report.fulfilled_volume, report.boxes_fulfilled);
    record_share(team_start, trucks);

    while (true) {
      int next = -1;
      for (size_t m = 0; m < trucks.size(); ++m) {
        if (trucks[m].cursor >= trucks[m].route->size()) continue;
        if (next < 0 || trucks[m].clock < trucks[next].clock) next = static_cast<int>(m);
      }
      if (next < 0) break;
      SimTruck& tr = trucks[next];
      int dest = (*tr.route)[tr.cursor++];
      double dt = full.travel(tr.position, dest);
      double dep = next_departure(shifts, tr.clock, dt);
      report.timeline.push_back({tr.global_id, dep, tr.position});
      tr.clock = dep + dt;
      tr.position = dest;
      arrive_boxes(boxes, tr, tr.clock, report.fulfilled_volume, report.boxes_fulfilled);
      record_share(tr.clock, trucks);
      team_clock = std::max(team_clock, tr.clock);
    }
    team_clock = std::max(team_clock, team_start);

    // boxes a team failed to deliver reset to their pre-team state, matching
    // the execution loop's demand accounting
    for (auto& b : boxes)
      if (!b.fulfilled) b = snapshot[b.id];
  }

  report.fulfillment_fraction =
      report.total_volume > 0 ? report.fulfilled_volume / report.total_volume : 1.0;
  return report;
}

void SyntheticSpec::validate() const {
  if (nodes < 2 || groups < 1 || boxes < groups)
    throw ArgumentError("synthetic spec: need nodes >= 2, groups >= 1 and boxes >= groups");
  if (p_rank3 > 0 && nodes < 3)
    throw ArgumentError("synthetic spec: rank-3 requirements need at least three nodes");
  if (!(box_volume > 0) || trucks < 1 || !(capacity > 0) || !(horizon > 0) || !(time_scale > 0))
    throw ArgumentError("synthetic spec: physical parameters must be positive");
  long rank2 = static_cast<long>(nodes) * (nodes - 1);
  long rank3 = nodes >= 3 ? rank2 * (nodes - 2) : 0;
  if (groups > rank2 + rank3)
    throw ArgumentError("synthetic spec: more groups than distinct routing requirements");
}

nlohmann::json SyntheticSpec::to_json() const {
  return nlohmann::json{
      {"nodes", nodes},           {"groups", groups},   {"boxes", boxes},
      {"box_volume", box_volume}, {"p_rank3", p_rank3}, {"trucks", trucks},
      {"capacity", capacity},     {"horizon_s", horizon}, {"time_scale", time_scale},
      {"seed", seed},
  };
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.nodes = j.value("nodes", s.nodes);
  s.groups = j.value("groups", s.groups);
  s.boxes = j.value("boxes", s.boxes);
  s.box_volume = j.value("box_volume", s.box_volume);
  s.p_rank3 = j.value("p_rank3", s.p_rank3);
  s.trucks = j.value("trucks", s.trucks);
  s.capacity = j.value("capacity", s.capacity);
  s.horizon = j.value("horizon_s", s.horizon);
  s.time_scale = j.value("time_scale", s.time_scale);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

env::Instance generate_synthetic_instance(const SyntheticSpec& spec) {
  spec.validate();
  StreamRng rng = StreamRng::derive(spec.seed, "synthetic");
  env::Instance inst;
  for (int i = 0; i < spec.nodes; ++i) {
    std::string name = spec.nodes == 8 ? kEightSiteNames[i]
                                       : "LOCATION_" + std::to_string(i + 1);
    inst.nodes.push_back({i, name, rng.uniform(), rng.uniform()});
  }
  inst.time_matrix.assign(spec.nodes, std::vector<double>(spec.nodes, 0.0));
  for (int i = 0; i < spec.nodes; ++i)
    for (int j = i + 1; j < spec.nodes; ++j) {
      double dx = inst.nodes[i].x - inst.nodes[j].x;
      double dy = inst.nodes[i].y - inst.nodes[j].y;
      double t = std::max(std::sqrt(dx * dx + dy * dy), 0.01) * spec.time_scale;
      inst.time_matrix[i][j] = t;
      inst.time_matrix[j][i] = t;
    }
  for (int m = 0; m < spec.trucks; ++m) inst.trucks.push_back({spec.capacity, -1});
  inst.horizon = spec.horizon;

  // distinct cyclic routing requirements
  std::set<env::NodeTuple> seen;
  std::vector<env::NodeTuple> requirements;
  while (static_cast<int>(requirements.size()) < spec.groups) {
    int rank = rng.uniform() < spec.p_rank3 ? 3 : 2;
    env::NodeTuple t;
    t.len = rank;
    bool ok = true;
    for (int i = 0; i < rank; ++i) {
      int node;
      int guard = 0;
      do {
        node = static_cast<int>(rng.below(spec.nodes));
        if (++guard > 1000) {
          ok = false;
          break;
        }
      } while ((i > 0 && node == t.v[i - 1]) || (i == rank - 1 && node == t.v[0]));
      t.v[i] = node;
    }
    if (!ok || seen.count(t)) continue;
    seen.insert(t);
    requirements.push_back(t);
  }

  // boxes: one per group, remainder spread uniformly
  std::vector<long> counts(spec.groups, 1);
  for (long b = spec.groups; b < spec.boxes; ++b) ++counts[rng.below(spec.groups)];

  for (int g = 0; g < spec.groups; ++g) {
    inst.box_groups.push_back(
        {env::DemandKind::cyclic, requirements[g], counts[g], spec.box_volume});
    inst.demand.push_back(
        {env::DemandKind::cyclic, requirements[g], counts[g] * spec.box_volume});
  }
  inst.validate();
  return inst;
}

std::string listing_csv(const std::vector<env::RouteLogEntry>& timeline,
                        const env::Instance& instance) {
  std::ostringstream out;
  out.precision(12);
  out << "Truck,Departure Time,Departure Node\n";
  for (const auto& e : timeline)
    out << "Truck " << e.truck << ',' << e.departure_time << ','
        << instance.nodes[e.from_node].name << '\n';
  return out.str();
}

std::string share_csv(const std::vector<DemandShareSample>& share) {
  std::ostringstream out;
  out.precision(12);
  out << "time_s,onboard_volume,satisfied_fraction\n";
  for (const auto& s : share)
    out << s.time_s << ',' << s.onboard_volume << ',' << s.satisfied_fraction << '\n';
  return out.str();
}

nlohmann::json solve_report_json(const ExecutionResult& exec, const FullScaleReport& sim) {
  nlohmann::json teams = nlohmann::json::array();
  for (size_t i = 0; i < exec.teams.size(); ++i) {
    const TeamRoutes& t = exec.teams[i];
    nlohmann::json trucks = nlohmann::json::array();
    for (size_t m = 0; m < t.routes.size(); ++m)
      trucks.push_back({{"truck", i * t.routes.size() + m},
                        {"start", t.starts[m]},
                        {"route", t.routes[m]}});
    teams.push_back({{"iteration", i + 1},
                     {"subset", t.subset},
                     {"coverage", t.coverage},
                     {"fulfilled_volume", t.fulfilled_volume},
                     {"trucks", trucks}});
  }
  return nlohmann::json{
      {"iterations", exec.iterations},
      {"trucks_used", exec.trucks_used},
      {"fulfillment_fraction", exec.fulfillment_fraction},
      {"box_recount", {{"boxes_total", sim.boxes_total},
                       {"boxes_fulfilled", sim.boxes_fulfilled},
                       {"fulfillment_fraction", sim.fulfillment_fraction}}},
      {"timelines", teams},
  };
}

}  // namespace qvrp::orch
