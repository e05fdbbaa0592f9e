#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "qvrp/env.hpp"
#include "qvrp/policy.hpp"
#include "qvrp/rng.hpp"

namespace qvrp::orch {

struct SubsetSearchConfig {
  int n_prime = 8;         // nodes per sub-instance
  int n_trucks_prime = 2;  // trucks per team
  int k_node_draws = 6;
  int k_subset_attempts = 3;
  int k_execution_trials = 6;
  double clip = 0.0;  // 0: take the checkpoint's training-volume default
  double truck_capacity = 10.0;
  double horizon = 2000.0;  // sub-episode horizon, seconds
  int max_iterations = 500;
  uint64_t seed = 0;

  void validate(int total_nodes) const;
  nlohmann::json to_json() const;
  static SubsetSearchConfig from_json(const nlohmann::json& j);
};

// Running off-board demand over the full instance, keyed by the original
// routing requirement.
using DemandPool = std::map<env::OriginKey, double>;

DemandPool pool_from_instance(const env::Instance& instance);
double pool_total(const DemandPool& pool);

// One random node subset per the draw procedure: requirement tuples are drawn
// uniformly without replacement and their nodes united; a draw that would
// overshoot n' is discarded (earlier nodes stay); leftovers are padded with
// uniform outside nodes. Returns sorted original node ids.
std::vector<int> draw_node_subset(const DemandPool& pool, int total_nodes, int n_prime,
                                  StreamRng& rng);

struct SubInstance {
  std::shared_ptr<env::Instance> instance;              // local node ids
  std::vector<int> nodes;                               // local -> original id
  std::map<env::OriginKey, env::OriginKey> origin_map;  // local -> original
  double clipped_total = 0.0;
};

SubInstance build_sub_instance(const env::Instance& full, const std::vector<int>& subset,
                               const DemandPool& pool, const SubsetSearchConfig& config);

struct SubsetChoice {
  std::vector<int> nodes;
  double mean_coverage = 0.0;
  std::vector<double> attempt_coverages;
};

SubsetChoice select_best_subset(const env::Instance& full, const DemandPool& pool,
                                policy::ParamStore& agent, const policy::ModelConfig& model,
                                const SubsetSearchConfig& config, uint64_t seed);

struct TeamRoutes {
  std::vector<int> subset;                      // original node ids
  std::vector<std::vector<int>> routes;         // per truck, original node ids
  std::vector<int> starts;                      // per truck start node, original ids
  double capacity = 0.0;                        // per truck
  double clip = 0.0;                            // demand visible per requirement
  std::vector<env::RouteLogEntry> route_log;    // local truck ids, relative seconds
  std::map<env::OriginKey, double> fulfilled;   // original tuples
  double fulfilled_volume = 0.0;
  double coverage = 0.0;  // of the clipped sub-instance demand
};

struct ExecutionResult {
  int iterations = 0;
  int trucks_used = 0;
  double initial_volume = 0.0;
  double fulfilled_volume = 0.0;
  double fulfillment_fraction = 0.0;
  std::vector<TeamRoutes> teams;
};

// Repeats subset selection, clipped sub-solves and demand subtraction until
// the pool is empty. Two consecutive zero-progress iterations fall back to a
// deterministic subset seeded from the remaining tuples; a third raises
// StagnationError.
ExecutionResult execution_loop(const env::Instance& full, policy::ParamStore& agent,
                               const policy::ModelConfig& model,
                               const SubsetSearchConfig& config);

struct ShiftConfig {
  // Two 8-hour driving windows per day.
  double shift1_start = 0.0;
  double shift1_end = 8.0 * 3600;
  double shift2_start = 16.0 * 3600;
  double shift2_end = 24.0 * 3600;
  double day = 24.0 * 3600;

  void validate() const;
  nlohmann::json to_json() const;
  static ShiftConfig from_json(const nlohmann::json& j);
};

// Earliest departure >= t such that the whole move [dep, dep + duration]
// stays inside one driving window.
double next_departure(const ShiftConfig& shifts, double t, double duration);

struct DemandShareSample {
  double time_s = 0.0;
  double onboard_volume = 0.0;
  double satisfied_fraction = 0.0;
};

struct FullScaleReport {
  long boxes_total = 0;
  long boxes_fulfilled = 0;
  double total_volume = 0.0;
  double fulfilled_volume = 0.0;
  double fulfillment_fraction = 0.0;
  std::vector<env::RouteLogEntry> timeline;  // global truck ids, absolute seconds
  std::vector<DemandShareSample> share;
};

// Replays the suggested routes box by box: teams run sequentially, each from
// the start of a fresh driving window; every box carries its own volume and
// cyclic requirement; boxes not fulfilled by a team reset to their pre-team
// state, mirroring the execution loop's accounting.
FullScaleReport simulate_full_scale(const env::Instance& full,
                                    const std::vector<env::BoxGroup>& groups,
                                    const ExecutionResult& routes, const ShiftConfig& shifts);

struct SyntheticSpec {
  int nodes = 21;
  int groups = 107;
  long boxes = 3400;
  double box_volume = 1.0;
  double p_rank3 = 0.4;
  int trucks = 2;
  double capacity = 12.0;
  double horizon = 14400.0;
  double time_scale = 3600.0;
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

// Box groups with cyclic rank-2/3 requirements whose aggregated volumes form
// the initial demand tensor. With nodes == 8 the node names follow the
// eight-site preset.
env::Instance generate_synthetic_instance(const SyntheticSpec& spec);

std::string listing_csv(const std::vector<env::RouteLogEntry>& timeline,
                        const env::Instance& instance);
std::string share_csv(const std::vector<DemandShareSample>& share);
nlohmann::json solve_report_json(const ExecutionResult& exec, const FullScaleReport& sim);

}  // namespace qvrp::orch
