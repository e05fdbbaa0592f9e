#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qvrp/qonn.hpp"

namespace qvrp::qsim {

// Hardware stand-in: depolarizing channel per two-qubit gate plus independent
// readout bit flips. p = q = 0 reproduces ideal sampling statistics.
struct NoiseModel {
  double depolarizing_p = 0.0;
  double readout_flip_q = 0.0;
  bool ideal() const { return depolarizing_p == 0.0 && readout_flip_q == 0.0; }
  void validate() const;
};

// Full 2^n statevector. Qubit i maps to bit i; the unary basis vector e_i is
// the computational index 1 << i, matching the unary-subspace convention of
// qonn::RbsGate.
class StateVector {
 public:
  static constexpr int kMaxQubits = 14;

  explicit StateVector(int n);

  int qubit_count() const { return n_; }
  void set_basis(uint64_t index);
  void apply_rbs(int qa, int qb, double theta);
  void apply_pauli(int qubit, char pauli);  // 'X', 'Y' or 'Z'

  std::span<const std::complex<double>> amplitudes() const { return amps_; }
  std::vector<double> probabilities() const;
  double unary_probability(int component) const;
  double norm() const;

 private:
  int n_;
  std::vector<std::complex<double>> amps_;
};

// Loader prefix for x followed by the pyramid, as a flat gate list acting on
// the initial basis state e_1.
std::vector<qonn::RbsGate> build_circuit(std::span<const double> x,
                                         const qonn::PyramidCircuit& circuit);

// pi/4 comparison stage on pairs (offset, offset+1), (offset+2, offset+3), ...
std::vector<qonn::RbsGate> comparison_stage(int n, int offset);

// Exact noiseless statevector after running `gates` from e_1.
StateVector simulate_state(std::span<const qonn::RbsGate> gates, int n);

// Loader + pyramid convenience wrapper.
StateVector simulate_state(std::span<const double> x, const qonn::PyramidCircuit& circuit);

// Measurement counts over all 2^n outcomes. Ideal noise draws all shots from
// the exact distribution; otherwise every shot runs its own noise trajectory.
// Deterministic given the seed, independent of threading.
std::vector<long> sample_counts(std::span<const qonn::RbsGate> gates, int n, long shots,
                                const NoiseModel& noise, uint64_t seed);

struct TomographyResult {
  std::vector<double> estimate;
  long shots_per_circuit = 0;  // 0 in exact-probability mode
  int circuits_used = 3;
};

// Relative sign of components (i, i+1) from the two comparison circuits'
// unary probabilities: +1 same sign, -1 opposite, 0 unreliable.
std::vector<int> relative_signs(const std::vector<double>& magnitudes,
                                const std::vector<double>& probs_even,
                                const std::vector<double>& probs_odd, double threshold);

// Anchors the first component at +1 and chains the relative signs; an
// unreliable comparison inherits the previous sign.
std::vector<int> cascade_signs(const std::vector<int>& relative);

TomographyResult tomography(std::span<const double> x, const qonn::PyramidCircuit& circuit,
                            long shots, const NoiseModel& noise, uint64_t seed);

TomographyResult tomography_exact(std::span<const double> x,
                                  const qonn::PyramidCircuit& circuit);

struct BenchmarkConfig {
  std::vector<int> qubit_counts{4, 5, 6, 7, 8, 9, 10};
  int trials = 10;
  long shots = 500;
  NoiseModel noise;
  uint64_t seed = 0;
  bool exact = false;  // exact probabilities instead of sampling
};

struct BenchmarkRow {
  int n = 0;
  int trial = 0;
  int component = 0;
  double exact_value = 0.0;
  double estimated_value = 0.0;
  long shots = 0;
  double noise_p = 0.0;
};

struct BenchmarkReport {
  BenchmarkConfig config;
  std::vector<BenchmarkRow> rows;
  long circuits_executed = 0;
  long total_measurements = 0;
  std::vector<std::pair<int, double>> mean_abs_error_by_n;
};

// Draws parameters and inputs from Normal(1, 1), runs tomography per trial
// and collects paired (exact, estimated) components.
BenchmarkReport benchmark_qonn(const BenchmarkConfig& config);

std::string benchmark_csv(const BenchmarkReport& report);
nlohmann::json benchmark_summary(const BenchmarkReport& report);

}  // namespace qvrp::qsim
