#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "qvrp/env.hpp"
#include "qvrp/errors.hpp"

using namespace qvrp;
using namespace qvrp::env;

namespace {

// Grid-ish instance with all-positive travel times.
std::shared_ptr<Instance> make_instance(int n, std::vector<TruckSpec> trucks, double horizon,
                                        std::vector<DemandEntry> demand,
                                        double unmet_penalty = 0.0) {
  auto inst = std::make_shared<Instance>();
  for (int i = 0; i < n; ++i)
    inst->nodes.push_back({i, "N" + std::to_string(i), (i % 3) * 0.5, (i / 3) * 0.5});
  inst->time_matrix.assign(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) inst->time_matrix[i][j] = 10.0 + 3.0 * ((i * 7 + j * 5) % 11);
  inst->trucks = std::move(trucks);
  inst->horizon = horizon;
  inst->demand = std::move(demand);
  inst->unmet_penalty = unmet_penalty;
  return inst;
}

double onboard_of(const EnvState& s, int m, NodeTuple remaining) {
  double total = 0;
  for (const auto& [key, v] : s.truck(m).onboard)
    if (key.remaining == remaining) total += v;
  return total;
}

double offboard_of(const EnvState& s, NodeTuple remaining) {
  double total = 0;
  for (const auto& [key, v] : s.offboard())
    if (key.remaining == remaining) total += v;
  return total;
}

double conserved_total(const EnvState& s) {
  return s.offboard_total() + s.onboard_total() + s.fulfilled_volume();
}

std::shared_ptr<Instance> random_instance(std::mt19937_64& rng) {
  int n = 4 + static_cast<int>(rng() % 5);
  int trucks = 1 + static_cast<int>(rng() % 3);
  std::vector<TruckSpec> specs;
  for (int m = 0; m < trucks; ++m) specs.push_back({4.0 + static_cast<double>(rng() % 8), -1});
  std::vector<DemandEntry> demand;
  int tuples = 1 + static_cast<int>(rng() % 6);
  for (int t = 0; t < tuples; ++t) {
    DemandEntry d;
    d.kind = rng() % 2 == 0 ? DemandKind::direct : DemandKind::cyclic;
    int rank = 2 + static_cast<int>(rng() % 2);
    d.nodes.len = rank;
    int prev = -1;
    for (int i = 0; i < rank; ++i) {
      int node;
      do {
        node = static_cast<int>(rng() % n);
      } while (node == prev || (d.kind == DemandKind::cyclic && i == rank - 1 && node == d.nodes.v[0]));
      d.nodes.v[i] = node;
      prev = node;
    }
    d.volume = 1.0 + static_cast<double>(rng() % 10) * 0.5;
    demand.push_back(d);
  }
  return make_instance(n, specs, 400.0, demand);
}

}  // namespace

TEST_CASE("myopic vectors on an empty instance are all zero") {
  auto inst = make_instance(5, {{10.0, 0}}, 100.0, {});
  EnvState state(inst);
  auto my = state.myopic();
  for (double v : my.delta_out) CHECK(v == 0.0);
  for (double v : my.delta_in) CHECK(v == 0.0);
  for (auto& row : my.eps)
    for (double v : row) CHECK(v == 0.0);
}

TEST_CASE("myopic vectors match the worked two-tuple example") {
  // direct (2,3) = 5 and cyclic (3,7,4) = 2
  auto inst = make_instance(8, {{10.0, 0}}, 100.0,
                            {{DemandKind::direct, NodeTuple::of({2, 3}), 5.0},
                             {DemandKind::cyclic, NodeTuple::of({3, 7, 4}), 2.0}});
  EnvState state(inst);
  auto my = state.myopic();
  CHECK(my.delta_out[2] == 5.0);
  CHECK(my.delta_out[3] == 2.0);
  CHECK(my.delta_in[3] == 5.0);
  CHECK(my.delta_in[7] == 2.0);
  CHECK(my.demand_matrix.at(2, 3) == 5.0);
  CHECK(my.demand_matrix.at(3, 7) == 2.0);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      if (!((i == 2 && j == 3) || (i == 3 && j == 7))) CHECK(my.demand_matrix.at(i, j) == 0.0);
}

TEST_CASE("myopic recompute equals dense brute-force summation") {
  std::mt19937_64 rng(41);
  for (int rep = 0; rep < 30; ++rep) {
    auto inst = random_instance(rng);
    EnvState state(inst);
    int n = inst->node_count();
    // dense sums over every stored index tuple
    std::vector<double> out(n, 0.0), in(n, 0.0);
    for (const auto& [key, v] : state.offboard()) {
      out[key.remaining.at(0)] += v;
      in[key.remaining.at(1)] += v;
    }
    auto my = state.myopic();
    for (int i = 0; i < n; ++i) {
      CHECK(my.delta_out[i] == doctest::Approx(out[i]).epsilon(1e-12));
      CHECK(my.delta_in[i] == doctest::Approx(in[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("the cyclic demand event table replays exactly") {
  auto inst = make_instance(
      8, {{10.0, 0}, {10.0, 0}, {10.0, 0}, {10.0, 0}}, 1000.0,
      {{DemandKind::cyclic, NodeTuple::of({3, 7, 4}), 2.0}});
  EnvState state(inst);
  NodeTuple origin = NodeTuple::of({3, 7, 4});

  // initial: compact cyclic waiting at node 3
  CHECK(offboard_of(state, origin) == 2.0);

  // picked up from node 3 by truck 2, next stop 7
  state.step(2, 3);
  CHECK(offboard_of(state, origin) == 0.0);
  CHECK(onboard_of(state, 2, NodeTuple::of({7, 4, 3})) == 2.0);

  // dropped off at node 7 by truck 2
  state.step(2, 7);
  CHECK(onboard_of(state, 2, NodeTuple::of({7, 4, 3})) == 0.0);
  CHECK(offboard_of(state, NodeTuple::of({7, 4, 3})) == 2.0);

  // picked up from node 7 by truck 1, next stop 4
  state.step(1, 7);
  CHECK(offboard_of(state, NodeTuple::of({7, 4, 3})) == 0.0);
  CHECK(onboard_of(state, 1, NodeTuple::of({4, 3})) == 2.0);

  // dropped off at node 4 by truck 1
  state.step(1, 4);
  CHECK(offboard_of(state, NodeTuple::of({4, 3})) == 2.0);

  // picked up from node 4 by truck 3, next stop 3
  state.step(3, 4);
  CHECK(offboard_of(state, NodeTuple::of({4, 3})) == 0.0);
  CHECK(onboard_of(state, 3, NodeTuple::of({3})) == 2.0);

  // dropped off at node 3 by truck 3: requirements fulfilled
  state.step(3, 3);
  CHECK(state.fulfilled_volume() == 2.0);
  CHECK(state.offboard_total() == 0.0);
  CHECK(state.onboard_total() == 0.0);
  auto it = state.fulfilled_by_origin().find({origin, DemandKind::cyclic});
  REQUIRE(it != state.fulfilled_by_origin().end());
  CHECK(it->second == 2.0);
}

TEST_CASE("driving to a node with no demand only advances the clock") {
  auto inst = make_instance(4, {{10.0, 0}}, 100.0,
                            {{DemandKind::direct, NodeTuple::of({2, 3}), 1.0}});
  EnvState state(inst);
  double before = conserved_total(state);
  double dt = state.step(0, 1);
  CHECK(dt == inst->travel(0, 1));
  CHECK(state.truck(0).clock == dt);
  CHECK(conserved_total(state) == before);
  CHECK(state.truck(0).onboard.empty());
}

TEST_CASE("step guards reject bad moves") {
  auto inst = make_instance(4, {{10.0, 0}}, 25.0,
                            {{DemandKind::direct, NodeTuple::of({1, 2}), 1.0}});
  EnvState state(inst);
  CHECK_THROWS_AS(state.step(0, 7), ArgumentError);
  // revisiting the current node is a zero-cost service round
  double before = state.truck(0).clock;
  state.step(0, 0);
  CHECK(state.truck(0).clock == before);
  // all travel times are >= 10, so two hops exceed 25s only sometimes; find one
  int far = -1;
  for (int z = 1; z < 4; ++z)
    if (inst->travel(0, z) > 25.0) far = z;
  if (far >= 0) CHECK_THROWS_AS(state.step(0, far), InfeasibleMoveError);
}

TEST_CASE("volume is conserved and capacity respected over random episodes") {
  std::mt19937_64 rng(43);
  long steps_done = 0;
  for (int rep = 0; rep < 60; ++rep) {
    auto inst = random_instance(rng);
    EnvState state(inst);
    double initial = state.initial_volume();
    CHECK(conserved_total(state) == doctest::Approx(initial).epsilon(1e-12));
    while (!state.done()) {
      int m = state.active_truck();
      auto mask = state.feasibility_mask(m);
      std::vector<int> actions;
      for (int a = 0; a <= state.node_count(); ++a)
        if (mask[a]) actions.push_back(a);
      REQUIRE(!actions.empty());
      // biased away from ending immediately so episodes exercise the dynamics
      int pick = actions[rng() % actions.size()];
      if (pick == state.end_action() && actions.size() > 1 && rng() % 4 != 0)
        pick = actions[rng() % (actions.size() - 1)];
      state.apply(m, pick);
      ++steps_done;
      CHECK(conserved_total(state) == doctest::Approx(initial).epsilon(1e-9));
      for (int t = 0; t < state.truck_count(); ++t)
        CHECK(state.truck(t).onboard_volume() <= state.truck(t).capacity + 1e-9);
    }
  }
  CHECK(steps_done > 500);
}

TEST_CASE("every feasible node admits a legal step") {
  std::mt19937_64 rng(47);
  for (int rep = 0; rep < 25; ++rep) {
    auto inst = random_instance(rng);
    EnvState state(inst);
    for (int walk = 0; walk < 6; ++walk) {
      int m = state.active_truck();
      if (m < 0) break;
      auto mask = state.feasibility_mask(m);
      for (int z = 0; z < state.node_count(); ++z) {
        if (!mask[z]) continue;
        EnvState copy = state;
        CHECK_NOTHROW(copy.step(m, z));
      }
      std::vector<int> actions;
      for (int a = 0; a < state.node_count(); ++a)
        if (mask[a]) actions.push_back(a);
      if (actions.empty()) break;
      state.apply(m, actions[rng() % actions.size()]);
    }
  }
}

TEST_CASE("fresh instance with ample horizon marks all demand-bearing nodes feasible") {
  auto inst = make_instance(6, {{10.0, 0}}, 10000.0,
                            {{DemandKind::direct, NodeTuple::of({2, 3}), 1.0},
                             {DemandKind::cyclic, NodeTuple::of({4, 1}), 2.0}});
  EnvState state(inst);
  auto mask = state.feasibility_mask(0);
  CHECK(mask[2]);
  CHECK(mask[4]);
  CHECK(mask[state.end_action()]);
  CHECK_FALSE(mask[3]);  // destination only: nothing to do there yet
  CHECK_FALSE(mask[5]);
  CHECK_FALSE(mask[0]);  // own position
}

TEST_CASE("at the horizon only the end action remains feasible") {
  auto inst = make_instance(4, {{10.0, 0}}, 10.0,
                            {{DemandKind::direct, NodeTuple::of({1, 2}), 1.0}});
  EnvState state(inst);
  // burn the horizon with the cheapest legal move
  int cheapest = 1;
  for (int z = 1; z < 4; ++z)
    if (inst->travel(0, z) < inst->travel(0, cheapest)) cheapest = z;
  if (inst->travel(0, cheapest) <= 10.0) state.step(0, cheapest);
  auto mask = state.feasibility_mask(0);
  for (int z = 0; z < 4; ++z) CHECK_FALSE(mask[z]);
  CHECK(mask[state.end_action()]);
}

TEST_CASE("episode reward equals the negated route time") {
  auto inst = make_instance(4, {{10.0, 0}}, 500.0,
                            {{DemandKind::direct, NodeTuple::of({1, 2}), 1.0}});
  EnvState state(inst);
  CHECK(state.reward() == 0.0);  // no moves, no penalty configured

  double t01 = inst->travel(0, 1), t10 = inst->travel(1, 0);
  state.step(0, 1);
  state.step(0, 0);
  CHECK(state.reward() == doctest::Approx(-(t01 + t10)));
}

TEST_CASE("reward equals an independent re-summation over the logged route") {
  std::mt19937_64 rng(53);
  for (int rep = 0; rep < 20; ++rep) {
    auto inst = random_instance(rng);
    EnvState state(inst);
    std::vector<std::vector<int>> routes(state.truck_count());
    while (!state.done()) {
      int m = state.active_truck();
      auto mask = state.feasibility_mask(m);
      std::vector<int> actions;
      for (int a = 0; a <= state.node_count(); ++a)
        if (mask[a]) actions.push_back(a);
      int pick = actions[rng() % actions.size()];
      if (pick != state.end_action()) routes[m].push_back(pick);
      state.apply(m, pick);
    }
    double resum = 0;
    for (int m = 0; m < state.truck_count(); ++m) {
      int pos = inst->start_of(m);
      for (int z : routes[m]) {
        resum += inst->travel(pos, z);
        pos = z;
      }
    }
    CHECK(state.total_drive_time() == doctest::Approx(resum).epsilon(1e-12));
    CHECK(state.reward() == doctest::Approx(-resum).epsilon(1e-12));
  }
}

TEST_CASE("unmet-demand penalty enters the reward when configured") {
  auto inst = make_instance(4, {{10.0, 0}}, 500.0,
                            {{DemandKind::direct, NodeTuple::of({1, 2}), 3.0}}, 7.0);
  EnvState state(inst);
  state.end_truck(0);
  CHECK(state.reward() == doctest::Approx(-7.0 * 3.0));
}

TEST_CASE("incrementally maintained myopic vectors equal a fresh recompute") {
  std::mt19937_64 rng(59);
  for (int rep = 0; rep < 20; ++rep) {
    auto inst = random_instance(rng);
    EnvState state(inst);
    for (int walk = 0; walk < 10 && !state.done(); ++walk) {
      int m = state.active_truck();
      auto mask = state.feasibility_mask(m);
      std::vector<int> actions;
      for (int a = 0; a <= state.node_count(); ++a)
        if (mask[a]) actions.push_back(a);
      state.apply(m, actions[rng() % actions.size()]);
      auto fresh = state.myopic();
      const auto& cached = state.cached_myopic();
      for (int i = 0; i < state.node_count(); ++i) {
        CHECK(std::fabs(fresh.delta_out[i] - cached.delta_out[i]) < 1e-9);
        CHECK(std::fabs(fresh.delta_in[i] - cached.delta_in[i]) < 1e-9);
      }
      for (int t = 0; t < state.truck_count(); ++t)
        for (int i = 0; i < state.node_count(); ++i)
          CHECK(std::fabs(fresh.eps[t][i] - cached.eps[t][i]) < 1e-9);
      CHECK(max_abs_diff(fresh.demand_matrix, cached.demand_matrix) < 1e-9);
    }
  }
}

TEST_CASE("step is a pure function of state, truck and destination") {
  auto inst = make_instance(6, {{4.0, 0}, {4.0, 0}}, 300.0,
                            {{DemandKind::direct, NodeTuple::of({2, 3}), 5.0},
                             {DemandKind::cyclic, NodeTuple::of({2, 4}), 3.0}});
  EnvState a(inst);
  EnvState b = a;
  a.step(0, 2);
  b.step(0, 2);
  CHECK(a.offboard() == b.offboard());
  CHECK(a.truck(0).onboard == b.truck(0).onboard);
  CHECK(a.fulfilled_volume() == b.fulfilled_volume());
}

TEST_CASE("partial pickup splits a tuple at the capacity boundary") {
  auto inst = make_instance(4, {{2.5, 0}}, 500.0,
                            {{DemandKind::direct, NodeTuple::of({1, 2}), 4.0}});
  EnvState state(inst);
  state.step(0, 1);
  CHECK(state.truck(0).onboard_volume() == doctest::Approx(2.5));
  CHECK(offboard_of(state, NodeTuple::of({1, 2})) == doctest::Approx(1.5));
  // larger tuples are preferred when both fit partially
  auto inst2 = make_instance(5, {{3.0, 0}}, 500.0,
                             {{DemandKind::direct, NodeTuple::of({1, 2}), 2.0},
                              {DemandKind::direct, NodeTuple::of({1, 3}), 5.0}});
  EnvState s2(inst2);
  s2.step(0, 1);
  CHECK(onboard_of(s2, 0, NodeTuple::of({3})) == doctest::Approx(3.0));
  CHECK(onboard_of(s2, 0, NodeTuple::of({2})) == 0.0);
}

TEST_CASE("trucks service their starting node before the first decision") {
  auto inst = make_instance(4, {{10.0, 1}}, 500.0,
                            {{DemandKind::direct, NodeTuple::of({1, 2}), 2.0}});
  EnvState state(inst);
  CHECK(onboard_of(state, 0, NodeTuple::of({2})) == 2.0);
  CHECK(state.offboard_total() == 0.0);
}

TEST_CASE("instance json round-trips losslessly") {
  auto inst = make_instance(5, {{7.5, 2}, {3.0, -1}}, 777.0,
                            {{DemandKind::direct, NodeTuple::of({1, 2}), 2.25},
                             {DemandKind::cyclic, NodeTuple::of({3, 0, 4}), 1.5}},
                            2.0);
  inst->box_groups.push_back({DemandKind::cyclic, NodeTuple::of({3, 0, 4}), 6, 0.25});
  auto j = inst->to_json();
  Instance back = Instance::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.node_count() == 5);
  CHECK(back.trucks[0].start_node == 2);
  CHECK(back.trucks[1].start_node == -1);
  CHECK(back.unmet_penalty == 2.0);
  REQUIRE(back.box_groups.size() == 1);
  CHECK(back.box_groups[0].count == 6);

  auto path = std::filesystem::temp_directory_path() / "qvrp_instance_roundtrip.json";
  save_instance(*inst, path.string());
  Instance loaded = load_instance(path.string());
  CHECK(loaded.to_json() == j);
  std::filesystem::remove(path);
}

TEST_CASE("route log captures departures in csv form") {
  auto inst = make_instance(4, {{10.0, 0}}, 500.0,
                            {{DemandKind::direct, NodeTuple::of({1, 2}), 1.0}});
  EnvState state(inst);
  state.step(0, 1);
  state.step(0, 2);
  auto csv = route_log_csv(state.route_log());
  CHECK(csv.find("truck,departure_time_s,departure_node\n") == 0);
  CHECK(csv.find("0,0,0\n") != std::string::npos);
}
