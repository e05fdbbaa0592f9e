#pragma once

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qvrp/tensor.hpp"

namespace qvrp::qonn {

// Two-qubit reconfigurable beam-splitter gate. Restricted to the unary
// subspace it acts on amplitude components (a, b) as the planar rotation
//   x_a' =  cos(theta) x_a + sin(theta) x_b
//   x_b' = -sin(theta) x_a + cos(theta) x_b
struct RbsGate {
  int qubit_a = 0;
  int qubit_b = 0;
  double theta = 0.0;
};

using GatePairs = std::vector<std::pair<int, int>>;

// Qubit pairs of the pyramidal layout in execution order. Wire pair
// (w, w+1) carries n-1-w gates at time columns w, w+2, ...; columns are
// emitted left to right, top pair first within a column.
GatePairs pyramid_pairs(int n);

// Pyramidal RBS circuit on n qubits with n(n-1)/2 angles, one per gate in
// execution order. Immutable after construction.
class PyramidCircuit {
 public:
  explicit PyramidCircuit(int n);
  PyramidCircuit(int n, std::vector<double> thetas);

  int qubit_count() const { return n_; }
  int parameter_count() const { return static_cast<int>(thetas_.size()); }
  const std::vector<double>& thetas() const { return thetas_; }
  const std::vector<RbsGate>& gates() const { return gates_; }
  std::shared_ptr<const GatePairs> pairs() const { return pairs_; }

  nlohmann::json to_json() const;
  static PyramidCircuit from_json(const nlohmann::json& j);

 private:
  int n_;
  std::vector<double> thetas_;
  std::vector<RbsGate> gates_;
  std::shared_ptr<const GatePairs> pairs_;
};

// Real amplitudes over the unary basis e_1..e_n.
struct UnaryState {
  std::vector<double> amplitudes;
  int size() const { return static_cast<int>(amplitudes.size()); }
  double norm() const;
};

// Applies a gate sequence to a unary amplitude vector in place.
void apply_gates_unary(std::span<double> amps, std::span<const RbsGate> gates);

// Angles alpha_0..alpha_{n-2} of the diagonal loader stack. Gate k applies
// RBS(alpha_k) to the ordered qubit pair (k+1, k); replaying the stack on the
// basis state e_1 reproduces x exactly. O(n).
std::vector<double> loader_angles(std::span<const double> x);

// Loader gates for x (see loader_angles).
std::vector<RbsGate> loader_gates(std::span<const double> x);

// Runs the loader: e_1 -> |x>.
UnaryState load_unary(std::span<const double> x);

UnaryState apply_pyramid(const UnaryState& state, const PyramidCircuit& circuit);

// The orthogonal matrix implemented by the circuit in the unary encoding,
// extracted column by column.
Tensor extract_orthogonal_matrix(const PyramidCircuit& circuit);

// W * v for an arbitrary real vector (zero vector maps to zero).
std::vector<double> qonn_layer(std::span<const double> v, const PyramidCircuit& circuit);

}  // namespace qvrp::qonn
