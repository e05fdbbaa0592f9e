#include "qvrp/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "qvrp/errors.hpp"

namespace qvrp::env {

namespace {

constexpr double kVolumeEps = 1e-12;
constexpr double kTimeEps = 1e-9;

}  // namespace

NodeTuple NodeTuple::of(std::initializer_list<int> nodes) {
  if (nodes.size() < 1 || nodes.size() > 3)
    throw ArgumentError("NodeTuple: rank must be between 1 and 3");
  NodeTuple t;
  t.len = static_cast<int>(nodes.size());
  int i = 0;
  for (int n : nodes) t.v[i++] = n;
  return t;
}

NodeTuple NodeTuple::tail() const {
  if (len < 2) throw ArgumentError("NodeTuple::tail on rank-1 tuple");
  NodeTuple t;
  t.len = len - 1;
  for (int i = 1; i < len; ++i) t.v[i - 1] = v[i];
  return t;
}

NodeTuple NodeTuple::rotated() const {
  NodeTuple t;
  t.len = len;
  for (int i = 1; i < len; ++i) t.v[i - 1] = v[i];
  t.v[len - 1] = v[0];
  return t;
}

std::string NodeTuple::str() const {
  std::string s = "(";
  for (int i = 0; i < len; ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s + ")";
}

const char* to_string(DemandKind kind) {
  return kind == DemandKind::cyclic ? "cyclic" : "direct";
}

DemandKind demand_kind_from_string(const std::string& s) {
  if (s == "cyclic") return DemandKind::cyclic;
  if (s == "direct") return DemandKind::direct;
  throw ArgumentError("unknown demand kind: " + s);
}

int Instance::start_of(int truck) const {
  int s = trucks[truck].start_node;
  if (s < 0) return truck % node_count();
  return s;
}

double Instance::total_demand_volume() const {
  double total = 0;
  for (const auto& d : demand) total += d.volume;
  return total;
}

void Instance::validate() const {
  int n = node_count();
  if (n < 1) throw ArgumentError("instance: needs at least one node");
  if (static_cast<int>(time_matrix.size()) != n)
    throw ArgumentError("instance: time matrix row count must equal node count");
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(time_matrix[i].size()) != n)
      throw ArgumentError("instance: time matrix must be square");
    for (int j = 0; j < n; ++j) {
      if (i == j && time_matrix[i][j] != 0.0)
        throw ArgumentError("instance: diagonal travel times must be zero");
      if (i != j && !(time_matrix[i][j] > 0.0))
        throw ArgumentError("instance: off-diagonal travel times must be positive");
    }
  }
  if (trucks.empty()) throw ArgumentError("instance: needs at least one truck");
  for (const auto& t : trucks) {
    if (!(t.capacity > 0)) throw ArgumentError("instance: truck capacity must be positive");
    if (t.start_node >= n) throw ArgumentError("instance: truck start node out of range");
  }
  if (!(horizon > 0)) throw ArgumentError("instance: horizon must be positive");
  for (const auto& d : demand) {
    if (d.nodes.len < 2 || d.nodes.len > 3)
      throw ArgumentError("instance: demand tuples must have rank 2 or 3");
    for (int i = 0; i < d.nodes.len; ++i) {
      if (d.nodes.v[i] < 0 || d.nodes.v[i] >= n)
        throw ArgumentError("instance: demand tuple references unknown node");
      if (i > 0 && d.nodes.v[i] == d.nodes.v[i - 1])
        throw ArgumentError("instance: consecutive demand stops must differ");
    }
    if (d.kind == DemandKind::cyclic && d.nodes.v[d.nodes.len - 1] == d.nodes.head())
      throw ArgumentError("instance: cyclic tuple already ends at its origin");
    if (!(d.volume > 0)) throw ArgumentError("instance: demand volume must be positive");
  }
  for (const auto& g : box_groups) {
    if (g.count < 1 || !(g.box_volume > 0))
      throw ArgumentError("instance: box group must have boxes of positive volume");
  }
}

nlohmann::json Instance::to_json() const {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (const auto& node : nodes)
    j["nodes"].push_back({{"id", node.id}, {"name", node.name}, {"x", node.x}, {"y", node.y}});
  j["time_matrix"] = time_matrix;
  j["trucks"] = nlohmann::json::array();
  for (const auto& t : trucks) {
    nlohmann::json tj{{"capacity", t.capacity}};
    if (t.start_node >= 0) tj["start"] = t.start_node;
    j["trucks"].push_back(tj);
  }
  j["horizon_s"] = horizon;
  j["demand"] = nlohmann::json::array();
  for (const auto& d : demand) {
    std::vector<int> ns(d.nodes.v.begin(), d.nodes.v.begin() + d.nodes.len);
    j["demand"].push_back({{"kind", to_string(d.kind)}, {"nodes", ns}, {"volume", d.volume}});
  }
  if (unmet_penalty != 0.0) j["unmet_penalty"] = unmet_penalty;
  if (!box_groups.empty()) {
    j["box_groups"] = nlohmann::json::array();
    for (const auto& g : box_groups) {
      std::vector<int> ns(g.nodes.v.begin(), g.nodes.v.begin() + g.nodes.len);
      j["box_groups"].push_back({{"kind", to_string(g.kind)},
                                 {"nodes", ns},
                                 {"count", g.count},
                                 {"box_volume", g.box_volume}});
    }
  }
  return j;
}

Instance Instance::from_json(const nlohmann::json& j) {
  Instance inst;
  for (const auto& nj : j.at("nodes")) {
    Instance::Node node;
    node.id = nj.at("id").get<int>();
    node.name = nj.value("name", std::string{});
    node.x = nj.at("x").get<double>();
    node.y = nj.at("y").get<double>();
    inst.nodes.push_back(node);
  }
  inst.time_matrix = j.at("time_matrix").get<std::vector<std::vector<double>>>();
  for (const auto& tj : j.at("trucks")) {
    TruckSpec t;
    t.capacity = tj.at("capacity").get<double>();
    t.start_node = tj.value("start", -1);
    inst.trucks.push_back(t);
  }
  inst.horizon = j.at("horizon_s").get<double>();
  for (const auto& dj : j.at("demand")) {
    DemandEntry d;
    d.kind = demand_kind_from_string(dj.at("kind").get<std::string>());
    auto ns = dj.at("nodes").get<std::vector<int>>();
    if (ns.size() < 2 || ns.size() > 3)
      throw ArgumentError("instance: demand tuples must have rank 2 or 3");
    d.nodes.len = static_cast<int>(ns.size());
    for (size_t i = 0; i < ns.size(); ++i) d.nodes.v[i] = ns[i];
    d.volume = dj.at("volume").get<double>();
    inst.demand.push_back(d);
  }
  inst.unmet_penalty = j.value("unmet_penalty", 0.0);
  if (j.contains("box_groups")) {
    for (const auto& gj : j.at("box_groups")) {
      BoxGroup g;
      g.kind = demand_kind_from_string(gj.at("kind").get<std::string>());
      auto ns = gj.at("nodes").get<std::vector<int>>();
      g.nodes.len = static_cast<int>(ns.size());
      for (size_t i = 0; i < ns.size(); ++i) g.nodes.v[i] = ns[i];
      g.count = gj.at("count").get<long>();
      g.box_volume = gj.at("box_volume").get<double>();
      inst.box_groups.push_back(g);
    }
  }
  inst.validate();
  return inst;
}

double Truck::onboard_volume() const {
  double total = 0;
  for (const auto& [key, v] : onboard) total += v;
  return total;
}

EnvState::EnvState(std::shared_ptr<const Instance> instance) : instance_(std::move(instance)) {
  instance_->validate();
  int n = instance_->node_count();
  int m = instance_->truck_count();
  trucks_.resize(m);
  for (int i = 0; i < m; ++i) {
    trucks_[i].position = instance_->start_of(i);
    trucks_[i].capacity = instance_->trucks[i].capacity;
  }
  cache_.eps.assign(m, std::vector<double>(n, 0.0));
  cache_.delta_out.assign(n, 0.0);
  cache_.delta_in.assign(n, 0.0);
  cache_.demand_matrix = Tensor({n, n});
  for (const auto& d : instance_->demand) {
    FlowKey key{d.nodes, d.nodes, d.kind};
    offboard_add(key, d.volume);
    initial_volume_ += d.volume;
  }
  // Trucks service their starting node before the first decision.
  for (int i = 0; i < m; ++i) arrive(i);
}

namespace {

inline void snap_tiny(double& x) {
  if (x < kVolumeEps && x > -kVolumeEps) x = 0.0;
}

}  // namespace

void EnvState::offboard_add(const FlowKey& key, double volume) {
  double& slot = offboard_[key];
  slot += volume;
  int head = key.remaining.head(), next = key.remaining.at(1);
  cache_.delta_out[head] += volume;
  cache_.delta_in[next] += volume;
  cache_.demand_matrix.at(head, next) += volume;
  if (slot <= kVolumeEps) {
    cache_.delta_out[head] -= slot;
    cache_.delta_in[next] -= slot;
    cache_.demand_matrix.at(head, next) -= slot;
    offboard_.erase(key);
  }
  snap_tiny(cache_.delta_out[head]);
  snap_tiny(cache_.delta_in[next]);
  snap_tiny(cache_.demand_matrix.at(head, next));
}

void EnvState::onboard_add(int m, const FlowKey& key, double volume) {
  double& slot = trucks_[m].onboard[key];
  slot += volume;
  cache_.eps[m][key.remaining.head()] += volume;
  if (slot <= kVolumeEps) {
    cache_.eps[m][key.remaining.head()] -= slot;
    trucks_[m].onboard.erase(key);
  }
  snap_tiny(cache_.eps[m][key.remaining.head()]);
}

bool EnvState::done() const {
  for (const auto& t : trucks_)
    if (!t.ended) return false;
  return true;
}

int EnvState::active_truck() const {
  int best = -1;
  for (int m = 0; m < truck_count(); ++m) {
    if (trucks_[m].ended) continue;
    if (best < 0 || trucks_[m].clock < trucks_[best].clock) best = m;
  }
  return best;
}

std::vector<bool> EnvState::feasibility_mask(int m) const {
  const Truck& t = trucks_[m];
  int n = node_count();
  std::vector<bool> mask(n + 1, false);
  mask[n] = true;  // end action
  if (t.ended) return mask;
  double spare = t.capacity - t.onboard_volume();
  std::vector<bool> dropoff(n, false), pickup(n, false);
  for (const auto& [key, v] : t.onboard) dropoff[key.remaining.head()] = true;
  if (spare > kVolumeEps)
    for (const auto& [key, v] : offboard_) pickup[key.remaining.head()] = true;
  for (int z = 0; z < n; ++z) {
    if (t.clock + instance_->travel(t.position, z) > instance_->horizon + kTimeEps) continue;
    // Revisiting the current node is a zero-cost reload: it is useful (and
    // allowed) only when something is waiting there, which lets one truck
    // carry a multi-stop requirement through its relay legs.
    mask[z] = z == t.position ? pickup[z] : (dropoff[z] || pickup[z]);
  }
  return mask;
}

double EnvState::step(int m, int destination) {
  Truck& t = trucks_[m];
  if (t.ended) throw ArgumentError("step: truck has ended its route");
  if (destination < 0 || destination >= node_count())
    throw ArgumentError("step: unknown node");
  double dt = instance_->travel(t.position, destination);
  if (t.clock + dt > instance_->horizon + kTimeEps)
    throw InfeasibleMoveError("step: move exceeds the horizon");
  route_log_.push_back({m, t.clock, t.position});
  t.clock += dt;
  total_drive_time_ += dt;
  t.position = destination;
  t.route.push_back(destination);
  arrive(m);
  return dt;
}

void EnvState::end_truck(int m) {
  trucks_[m].ended = true;
}

double EnvState::apply(int m, int action) {
  if (action == end_action()) {
    end_truck(m);
    return 0.0;
  }
  return step(m, action);
}

void EnvState::arrive(int m) {
  Truck& t = trucks_[m];
  int z = t.position;

  // Pickup candidates are fixed before unloading: material dropped during
  // this visit stays on the ground until a later visit.
  std::vector<std::pair<FlowKey, double>> cands;
  for (const auto& [key, v] : offboard_)
    if (key.remaining.head() == z) cands.emplace_back(key, v);

  // Drop-offs: every on-board entry whose next stop is here.
  std::vector<std::pair<FlowKey, double>> drops;
  for (const auto& [key, v] : t.onboard)
    if (key.remaining.head() == z) drops.emplace_back(key, v);
  for (const auto& [key, v] : drops) {
    onboard_add(m, key, -v);
    if (key.remaining.len == 1) {
      fulfilled_volume_ += v;
      fulfilled_by_origin_[{key.origin, key.kind}] += v;
    } else {
      // Remaining stops convert to off-board direct-style demand located here.
      offboard_add({key.remaining, key.origin, key.kind}, v);
    }
  }

  // Pickups: largest volume first, splitting a tuple when it exceeds the
  // spare capacity. Capacity is measured after the drop-offs above.
  std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  double spare = t.capacity - t.onboard_volume();
  for (const auto& [key, v] : cands) {
    if (spare <= kVolumeEps) break;
    double take = std::min(v, spare);
    NodeTuple onboard_nodes = key.compact_cyclic() ? key.origin.rotated() : key.remaining.tail();
    offboard_add(key, -take);
    onboard_add(m, {onboard_nodes, key.origin, key.kind}, take);
    spare -= take;
  }
}

MyopicVectors EnvState::myopic() const {
  int n = node_count();
  MyopicVectors out;
  out.eps.assign(truck_count(), std::vector<double>(n, 0.0));
  out.delta_out.assign(n, 0.0);
  out.delta_in.assign(n, 0.0);
  out.demand_matrix = Tensor({n, n});
  for (int m = 0; m < truck_count(); ++m)
    for (const auto& [key, v] : trucks_[m].onboard) out.eps[m][key.remaining.head()] += v;
  for (const auto& [key, v] : offboard_) {
    out.delta_out[key.remaining.head()] += v;
    out.delta_in[key.remaining.at(1)] += v;
    out.demand_matrix.at(key.remaining.head(), key.remaining.at(1)) += v;
  }
  return out;
}

double EnvState::onboard_total() const {
  double total = 0;
  for (const auto& t : trucks_) total += t.onboard_volume();
  return total;
}

double EnvState::offboard_total() const {
  double total = 0;
  for (const auto& [key, v] : offboard_) total += v;
  return total;
}

double EnvState::coverage() const {
  return initial_volume_ > 0 ? fulfilled_volume_ / initial_volume_ : 1.0;
}

double EnvState::makespan() const {
  double worst = 0;
  for (const auto& t : trucks_) worst = std::max(worst, t.clock);
  return worst;
}

double EnvState::reward() const {
  return -total_drive_time_ - instance_->unmet_penalty * unmet_volume();
}

double episode_reward(const EnvState& state) { return state.reward(); }

std::string route_log_csv(const std::vector<RouteLogEntry>& log) {
  std::ostringstream out;
  out << "truck,departure_time_s,departure_node\n";
  for (const auto& e : log) out << e.truck << ',' << e.departure_time << ',' << e.from_node << '\n';
  return out.str();
}

void save_instance(const Instance& instance, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write instance file: " + path);
  out << instance.to_json().dump(2) << '\n';
}

Instance load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot read instance file: " + path);
  nlohmann::json j;
  in >> j;
  return Instance::from_json(j);
}

}  // namespace qvrp::env
