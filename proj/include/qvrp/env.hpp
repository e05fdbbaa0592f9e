#pragma once

#include <array>
#include <compare>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "qvrp/tensor.hpp"

namespace qvrp::env {

// Ordered node tuple of rank 1..3. For off-board demand the head is the node
// where the material sits; for on-board demand the head is the next drop-off.
struct NodeTuple {
  std::array<int, 3> v{-1, -1, -1};
  int len = 0;

  static NodeTuple of(std::initializer_list<int> nodes);

  int head() const { return v[0]; }
  int at(int i) const { return v[i]; }

  NodeTuple tail() const;  // drops the head
  // Cyclic (i, j[, k]) rotated to its explicit return form (j[, k], i).
  NodeTuple rotated() const;

  auto operator<=>(const NodeTuple&) const = default;
  std::string str() const;
};

enum class DemandKind { direct, cyclic };

const char* to_string(DemandKind kind);
DemandKind demand_kind_from_string(const std::string& s);

struct DemandEntry {
  DemandKind kind = DemandKind::direct;
  NodeTuple nodes;
  double volume = 0.0;
};

// All boxes sharing one routing requirement.
struct BoxGroup {
  DemandKind kind = DemandKind::cyclic;
  NodeTuple nodes;
  long count = 0;
  double box_volume = 1.0;
};

struct TruckSpec {
  double capacity = 0.0;
  int start_node = -1;  // -1: assigned round-robin
};

struct Instance {
  struct Node {
    int id = 0;
    std::string name;
    double x = 0.0, y = 0.0;
  };

  std::vector<Node> nodes;
  std::vector<std::vector<double>> time_matrix;  // seconds
  std::vector<TruckSpec> trucks;
  double horizon = 0.0;  // seconds
  std::vector<DemandEntry> demand;
  double unmet_penalty = 0.0;  // reward penalty per unit of unmet volume
  std::vector<BoxGroup> box_groups;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int truck_count() const { return static_cast<int>(trucks.size()); }
  double travel(int from, int to) const { return time_matrix[from][to]; }
  int start_of(int truck) const;
  double total_demand_volume() const;

  void validate() const;
  nlohmann::json to_json() const;
  static Instance from_json(const nlohmann::json& j);
};

// A parcel flow inside an episode: the remaining stop sequence plus the
// original off-board requirement it descends from, so fulfilled volume can be
// attributed back to initial demand components.
struct FlowKey {
  NodeTuple remaining;
  NodeTuple origin;
  DemandKind kind = DemandKind::direct;

  // True while a cyclic requirement still sits at its origin in compact form.
  bool compact_cyclic() const { return kind == DemandKind::cyclic && remaining == origin; }

  auto operator<=>(const FlowKey&) const = default;
};

struct OriginKey {
  NodeTuple nodes;
  DemandKind kind = DemandKind::direct;
  auto operator<=>(const OriginKey&) const = default;
};

struct Truck {
  int position = 0;
  double clock = 0.0;
  double capacity = 0.0;
  bool ended = false;
  std::map<FlowKey, double> onboard;
  std::vector<int> route;  // chosen destinations, start position excluded

  double onboard_volume() const;
};

struct RouteLogEntry {
  int truck = 0;
  double departure_time = 0.0;
  int from_node = 0;
};

// Per-node summaries of the demand tensors: on-board next-stop volume per
// truck, outgoing/incoming off-board volume, and the matrix demand.
struct MyopicVectors {
  std::vector<std::vector<double>> eps;  // [truck][node]
  std::vector<double> delta_out;
  std::vector<double> delta_in;
  Tensor demand_matrix;  // [n,n]
};

class EnvState {
 public:
  explicit EnvState(std::shared_ptr<const Instance> instance);

  const Instance& instance() const { return *instance_; }
  int node_count() const { return instance_->node_count(); }
  int truck_count() const { return static_cast<int>(trucks_.size()); }
  int end_action() const { return node_count(); }

  const Truck& truck(int m) const { return trucks_[m]; }
  const std::map<FlowKey, double>& offboard() const { return offboard_; }
  const std::map<OriginKey, double>& fulfilled_by_origin() const { return fulfilled_by_origin_; }

  bool done() const;
  int active_truck() const;  // smallest clock among live trucks, ties by index

  // Feasible actions for the truck: node entries 0..n-1 plus the end action
  // at index n. A node is feasible when it is reachable within the horizon
  // and visiting it drops off or picks up something.
  std::vector<bool> feasibility_mask(int m) const;

  // Drives the truck to the destination node, then unloads and loads there.
  // Returns the elapsed driving time.
  double step(int m, int destination);
  void end_truck(int m);
  // step() for node actions, end_truck() for the end action.
  double apply(int m, int action);

  MyopicVectors myopic() const;                              // fresh recompute
  const MyopicVectors& cached_myopic() const { return cache_; }  // incrementally maintained

  double total_drive_time() const { return total_drive_time_; }
  double fulfilled_volume() const { return fulfilled_volume_; }
  double initial_volume() const { return initial_volume_; }
  double onboard_total() const;
  double offboard_total() const;
  double unmet_volume() const { return initial_volume_ - fulfilled_volume_; }
  double coverage() const;
  double makespan() const;
  double reward() const;

  const std::vector<RouteLogEntry>& route_log() const { return route_log_; }

 private:
  void arrive(int m);
  void offboard_add(const FlowKey& key, double volume);
  void onboard_add(int m, const FlowKey& key, double volume);

  std::shared_ptr<const Instance> instance_;
  std::vector<Truck> trucks_;
  std::map<FlowKey, double> offboard_;
  std::map<OriginKey, double> fulfilled_by_origin_;
  std::vector<RouteLogEntry> route_log_;
  MyopicVectors cache_;
  double total_drive_time_ = 0.0;
  double fulfilled_volume_ = 0.0;
  double initial_volume_ = 0.0;
};

double episode_reward(const EnvState& state);

std::string route_log_csv(const std::vector<RouteLogEntry>& log);

void save_instance(const Instance& instance, const std::string& path);
Instance load_instance(const std::string& path);

}  // namespace qvrp::env
