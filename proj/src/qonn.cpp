#include "qvrp/qonn.hpp"

#include <algorithm>
#include <cmath>

#include "qvrp/errors.hpp"

namespace qvrp::qonn {

GatePairs pyramid_pairs(int n) {
  if (n < 1) throw DimensionError("pyramid_pairs: need at least one qubit");
  struct Slot {
    int column;
    int wire;
  };
  std::vector<Slot> slots;
  for (int w = 0; w + 1 < n; ++w)
    for (int t = 0; t < n - 1 - w; ++t) slots.push_back({w + 2 * t, w});
  std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
    return a.column != b.column ? a.column < b.column : a.wire < b.wire;
  });
  GatePairs pairs;
  pairs.reserve(slots.size());
  for (const Slot& s : slots) pairs.emplace_back(s.wire, s.wire + 1);
  return pairs;
}

PyramidCircuit::PyramidCircuit(int n) : PyramidCircuit(n, std::vector<double>(n * (n - 1) / 2, 0.0)) {}

PyramidCircuit::PyramidCircuit(int n, std::vector<double> thetas)
    : n_(n), thetas_(std::move(thetas)) {
  if (n < 1) throw DimensionError("PyramidCircuit: need at least one qubit");
  auto pairs = pyramid_pairs(n);
  if (static_cast<int>(thetas_.size()) != n * (n - 1) / 2)
    throw DimensionError("PyramidCircuit: expected n(n-1)/2 angles");
  gates_.reserve(pairs.size());
  for (size_t g = 0; g < pairs.size(); ++g)
    gates_.push_back({pairs[g].first, pairs[g].second, thetas_[g]});
  pairs_ = std::make_shared<const GatePairs>(std::move(pairs));
}

nlohmann::json PyramidCircuit::to_json() const {
  return nlohmann::json{{"n", n_}, {"thetas", thetas_}};
}

PyramidCircuit PyramidCircuit::from_json(const nlohmann::json& j) {
  return PyramidCircuit(j.at("n").get<int>(), j.at("thetas").get<std::vector<double>>());
}

double UnaryState::norm() const {
  double s = 0;
  for (double a : amplitudes) s += a * a;
  return std::sqrt(s);
}

void apply_gates_unary(std::span<double> amps, std::span<const RbsGate> gates) {
  for (const RbsGate& g : gates) {
    double c = std::cos(g.theta), s = std::sin(g.theta);
    double xa = amps[g.qubit_a], xb = amps[g.qubit_b];
    amps[g.qubit_a] = c * xa + s * xb;
    amps[g.qubit_b] = -s * xa + c * xb;
  }
}

std::vector<double> loader_angles(std::span<const double> x) {
  int n = static_cast<int>(x.size());
  if (n < 2) throw DimensionError("loader_angles: need at least two components");
  double nrm2 = 0;
  for (double v : x) nrm2 += v * v;
  if (nrm2 < 1e-24) throw DegenerateInputError("loader_angles: zero vector");
  if (std::fabs(std::sqrt(nrm2) - 1.0) > 1e-9)
    throw NormalizationError("loader_angles: input is not a unit vector");

  // Tail norms t_k = ||x_k..x_n||; hyperspherical angles against them.
  std::vector<double> tail(n + 1, 0.0);
  for (int k = n - 1; k >= 0; --k) tail[k] = std::sqrt(x[k] * x[k] + tail[k + 1] * tail[k + 1]);
  std::vector<double> alpha(n - 1);
  for (int k = 0; k + 2 < n; ++k) alpha[k] = std::atan2(tail[k + 1], x[k]);
  alpha[n - 2] = std::atan2(x[n - 1], x[n - 2]);
  return alpha;
}

std::vector<RbsGate> loader_gates(std::span<const double> x) {
  auto alpha = loader_angles(x);
  std::vector<RbsGate> gates(alpha.size());
  for (size_t k = 0; k < alpha.size(); ++k)
    gates[k] = {static_cast<int>(k) + 1, static_cast<int>(k), alpha[k]};
  return gates;
}

UnaryState load_unary(std::span<const double> x) {
  auto gates = loader_gates(x);
  UnaryState st;
  st.amplitudes.assign(x.size(), 0.0);
  st.amplitudes[0] = 1.0;
  apply_gates_unary(st.amplitudes, gates);
  return st;
}

UnaryState apply_pyramid(const UnaryState& state, const PyramidCircuit& circuit) {
  if (state.size() != circuit.qubit_count())
    throw DimensionError("apply_pyramid: state length does not match circuit");
  UnaryState out = state;
  apply_gates_unary(out.amplitudes, circuit.gates());
  return out;
}

Tensor extract_orthogonal_matrix(const PyramidCircuit& circuit) {
  int n = circuit.qubit_count();
  Tensor w({n, n});
  std::vector<double> col(n);
  for (int j = 0; j < n; ++j) {
    std::fill(col.begin(), col.end(), 0.0);
    col[j] = 1.0;
    apply_gates_unary(col, circuit.gates());
    for (int i = 0; i < n; ++i) w.at(i, j) = col[i];
  }
  return w;
}

std::vector<double> qonn_layer(std::span<const double> v, const PyramidCircuit& circuit) {
  if (static_cast<int>(v.size()) != circuit.qubit_count())
    throw DimensionError("qonn_layer: vector length does not match circuit");
  std::vector<double> out(v.begin(), v.end());
  apply_gates_unary(out, circuit.gates());
  return out;
}

}  // namespace qvrp::qonn
