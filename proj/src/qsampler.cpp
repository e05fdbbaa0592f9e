#include "qvrp/qsampler.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qvrp/errors.hpp"
#include "qvrp/kernels.hpp"
#include "qvrp/rng.hpp"

namespace qvrp::qsim {

void NoiseModel::validate() const {
  if (depolarizing_p < 0 || depolarizing_p > 1 || readout_flip_q < 0 || readout_flip_q > 1)
    throw ArgumentError("NoiseModel: probabilities must lie in [0,1]");
}

StateVector::StateVector(int n) : n_(n) {
  if (n < 1) throw DimensionError("StateVector: need at least one qubit");
  if (n > kMaxQubits) throw CapacityError("StateVector: qubit count exceeds capacity");
  amps_.assign(1ULL << n, {0.0, 0.0});
  amps_[0] = {1.0, 0.0};
}

void StateVector::set_basis(uint64_t index) {
  if (index >= amps_.size()) throw ArgumentError("set_basis: index out of range");
  std::fill(amps_.begin(), amps_.end(), std::complex<double>{0.0, 0.0});
  amps_[index] = {1.0, 0.0};
}

void StateVector::apply_rbs(int qa, int qb, double theta) {
  if (qa == qb || qa < 0 || qb < 0 || qa >= n_ || qb >= n_)
    throw ArgumentError("apply_rbs: invalid qubit pair");
  kernels::rbs_sweep(amps_.data(), n_, qa, qb, std::cos(theta), std::sin(theta));
}

void StateVector::apply_pauli(int qubit, char pauli) {
  const uint64_t bit = 1ULL << qubit;
  const uint64_t dim = amps_.size();
  switch (pauli) {
    case 'X':
      for (uint64_t i = 0; i < dim; ++i)
        if (!(i & bit)) std::swap(amps_[i], amps_[i | bit]);
      break;
    case 'Z':
      for (uint64_t i = 0; i < dim; ++i)
        if (i & bit) amps_[i] = -amps_[i];
      break;
    case 'Y': {
      const std::complex<double> im{0.0, 1.0};
      for (uint64_t i = 0; i < dim; ++i)
        if (!(i & bit)) {
          std::complex<double> a0 = amps_[i];
          std::complex<double> a1 = amps_[i | bit];
          amps_[i] = -im * a1;
          amps_[i | bit] = im * a0;
        }
      break;
    }
    default:
      throw ArgumentError("apply_pauli: unknown Pauli");
  }
}

std::vector<double> StateVector::probabilities() const {
  std::vector<double> p(amps_.size());
  for (size_t i = 0; i < amps_.size(); ++i) p[i] = std::norm(amps_[i]);
  return p;
}

double StateVector::unary_probability(int component) const {
  return std::norm(amps_[1ULL << component]);
}

double StateVector::norm() const {
  double s = 0;
  for (const auto& a : amps_) s += std::norm(a);
  return std::sqrt(s);
}

std::vector<qonn::RbsGate> build_circuit(std::span<const double> x,
                                         const qonn::PyramidCircuit& circuit) {
  if (static_cast<int>(x.size()) != circuit.qubit_count())
    throw DimensionError("build_circuit: vector length does not match circuit");
  auto gates = qonn::loader_gates(x);
  const auto& pyr = circuit.gates();
  gates.insert(gates.end(), pyr.begin(), pyr.end());
  return gates;
}

std::vector<qonn::RbsGate> comparison_stage(int n, int offset) {
  std::vector<qonn::RbsGate> gates;
  for (int a = offset; a + 1 < n; a += 2) gates.push_back({a, a + 1, M_PI / 4.0});
  return gates;
}

StateVector simulate_state(std::span<const qonn::RbsGate> gates, int n) {
  StateVector sv(n);
  sv.set_basis(1);  // e_1
  for (const auto& g : gates) sv.apply_rbs(g.qubit_a, g.qubit_b, g.theta);
  return sv;
}

StateVector simulate_state(std::span<const double> x, const qonn::PyramidCircuit& circuit) {
  auto gates = build_circuit(x, circuit);
  return simulate_state(gates, circuit.qubit_count());
}

namespace {

uint64_t draw_outcome(const std::vector<double>& cumulative, double u) {
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  size_t idx = static_cast<size_t>(it - cumulative.begin());
  if (idx >= cumulative.size()) idx = cumulative.size() - 1;
  return idx;
}

const char kPaulis[3] = {'X', 'Y', 'Z'};

}  // namespace

std::vector<long> sample_counts(std::span<const qonn::RbsGate> gates, int n, long shots,
                                const NoiseModel& noise, uint64_t seed) {
  if (shots < 1) throw ArgumentError("sample_counts: need at least one shot");
  noise.validate();
  if (n > StateVector::kMaxQubits) throw CapacityError("sample_counts: qubit count exceeds capacity");
  std::vector<long> counts(1ULL << n, 0);

  if (noise.ideal()) {
    StateVector sv = simulate_state(gates, n);
    auto probs = sv.probabilities();
    std::vector<double> cumulative(probs.size());
    double acc = 0;
    for (size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      cumulative[i] = acc;
    }
    StreamRng rng = StreamRng::derive(seed, "shots");
    for (long s = 0; s < shots; ++s) ++counts[draw_outcome(cumulative, rng.uniform())];
    return counts;
  }

  for (long s = 0; s < shots; ++s) {
    StreamRng rng = StreamRng::derive(seed, "trajectory", static_cast<uint64_t>(s));
    StateVector sv(n);
    sv.set_basis(1);
    for (const auto& g : gates) {
      sv.apply_rbs(g.qubit_a, g.qubit_b, g.theta);
      if (rng.uniform() < noise.depolarizing_p) {
        // One of the 15 non-identity two-qubit Paulis, uniformly.
        int k = static_cast<int>(rng.below(15)) + 1;
        int pa = k / 4, pb = k % 4;
        if (pa > 0) sv.apply_pauli(g.qubit_a, kPaulis[pa - 1]);
        if (pb > 0) sv.apply_pauli(g.qubit_b, kPaulis[pb - 1]);
      }
    }
    auto probs = sv.probabilities();
    double u = rng.uniform();
    double acc = 0;
    uint64_t outcome = probs.size() - 1;
    for (size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) {
        outcome = i;
        break;
      }
    }
    if (noise.readout_flip_q > 0)
      for (int b = 0; b < n; ++b)
        if (rng.uniform() < noise.readout_flip_q) outcome ^= (1ULL << b);
    ++counts[outcome];
  }
  return counts;
}

std::vector<int> relative_signs(const std::vector<double>& magnitudes,
                                const std::vector<double>& probs_even,
                                const std::vector<double>& probs_odd, double threshold) {
  int n = static_cast<int>(magnitudes.size());
  std::vector<int> rel(n > 0 ? n - 1 : 0, 0);
  for (int i = 0; i + 1 < n; ++i) {
    if (magnitudes[i] <= threshold || magnitudes[i + 1] <= threshold) continue;
    const auto& probs = (i % 2 == 0) ? probs_even : probs_odd;
    double diff = probs[i] - probs[i + 1];  // 2 * y_i * y_{i+1}
    if (diff > 0)
      rel[i] = 1;
    else if (diff < 0)
      rel[i] = -1;
  }
  return rel;
}

std::vector<int> cascade_signs(const std::vector<int>& relative) {
  std::vector<int> signs(relative.size() + 1, 1);
  for (size_t i = 0; i < relative.size(); ++i)
    signs[i + 1] = relative[i] != 0 ? signs[i] * relative[i] : signs[i];
  return signs;
}

namespace {

TomographyResult tomography_impl(std::span<const double> x, const qonn::PyramidCircuit& circuit,
                                 long shots, const NoiseModel& noise, uint64_t seed, bool exact) {
  int n = circuit.qubit_count();
  auto base = build_circuit(x, circuit);

  auto with_stage = [&](int offset) {
    auto gates = base;
    auto stage = comparison_stage(n, offset);
    gates.insert(gates.end(), stage.begin(), stage.end());
    return gates;
  };

  std::vector<double> p1(n), p2(n), p3(n);
  if (exact) {
    StateVector sv1 = simulate_state(base, n);
    StateVector sv2 = simulate_state(with_stage(0), n);
    StateVector sv3 = simulate_state(with_stage(1), n);
    for (int i = 0; i < n; ++i) {
      p1[i] = sv1.unary_probability(i);
      p2[i] = sv2.unary_probability(i);
      p3[i] = sv3.unary_probability(i);
    }
  } else {
    auto c1 = sample_counts(base, n, shots, noise, hash_combine(seed, 1));
    auto c2 = sample_counts(with_stage(0), n, shots, noise, hash_combine(seed, 2));
    auto c3 = sample_counts(with_stage(1), n, shots, noise, hash_combine(seed, 3));
    for (int i = 0; i < n; ++i) {
      p1[i] = static_cast<double>(c1[1ULL << i]) / shots;
      p2[i] = static_cast<double>(c2[1ULL << i]) / shots;
      p3[i] = static_cast<double>(c3[1ULL << i]) / shots;
    }
  }

  std::vector<double> mags(n);
  for (int i = 0; i < n; ++i) mags[i] = std::sqrt(std::max(0.0, p1[i]));

  double threshold = exact ? 1e-12 : 2.0 / std::sqrt(static_cast<double>(shots));
  auto rel = relative_signs(mags, p2, p3, threshold);
  auto signs = cascade_signs(rel);

  TomographyResult result;
  result.shots_per_circuit = exact ? 0 : shots;
  result.estimate.resize(n);
  for (int i = 0; i < n; ++i) result.estimate[i] = signs[i] * mags[i];
  return result;
}

}  // namespace

TomographyResult tomography(std::span<const double> x, const qonn::PyramidCircuit& circuit,
                            long shots, const NoiseModel& noise, uint64_t seed) {
  if (shots < 1) throw ArgumentError("tomography: need at least one shot");
  return tomography_impl(x, circuit, shots, noise, seed, false);
}

TomographyResult tomography_exact(std::span<const double> x,
                                  const qonn::PyramidCircuit& circuit) {
  return tomography_impl(x, circuit, 0, NoiseModel{}, 0, true);
}

BenchmarkReport benchmark_qonn(const BenchmarkConfig& config) {
  config.noise.validate();
  for (int n : config.qubit_counts)
    if (n < 2 || n > StateVector::kMaxQubits)
      throw CapacityError("benchmark_qonn: qubit count out of range");
  if (config.trials < 1) throw ArgumentError("benchmark_qonn: need at least one trial");

  BenchmarkReport report;
  report.config = config;

  struct Run {
    int n;
    int trial;
    std::vector<double> exact;
    std::vector<double> estimate;
  };
  std::vector<Run> runs;
  for (int n : config.qubit_counts)
    for (int t = 0; t < config.trials; ++t) runs.push_back({n, t, {}, {}});

  int total = static_cast<int>(runs.size());
#ifdef QVRP_OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(kernels::worker_count())
#endif
  for (int r = 0; r < total; ++r) {
    Run& run = runs[r];
    StreamRng rng = StreamRng::derive(config.seed, "bench", run.n, run.trial);
    int params = run.n * (run.n - 1) / 2;
    std::vector<double> thetas(params);
    for (double& t : thetas) t = rng.normal(1.0, 1.0);
    std::vector<double> x(run.n);
    double nrm = 0;
    do {
      nrm = 0;
      for (double& v : x) {
        v = rng.normal(1.0, 1.0);
        nrm += v * v;
      }
    } while (nrm < 1e-12);
    nrm = std::sqrt(nrm);
    for (double& v : x) v /= nrm;

    qonn::PyramidCircuit circuit(run.n, thetas);
    run.exact = qonn::qonn_layer(x, circuit);
    TomographyResult tomo =
        config.exact ? tomography_exact(x, circuit)
                     : tomography(x, circuit, config.shots, config.noise,
                                  hash_combine(config.seed, static_cast<uint64_t>(r)));
    // The estimate carries a free global sign; align it against the exact
    // output before reporting errors.
    double err_plus = 0, err_minus = 0;
    for (int i = 0; i < run.n; ++i) {
      err_plus += std::fabs(tomo.estimate[i] - run.exact[i]);
      err_minus += std::fabs(-tomo.estimate[i] - run.exact[i]);
    }
    double flip = err_minus < err_plus ? -1.0 : 1.0;
    run.estimate.resize(run.n);
    for (int i = 0; i < run.n; ++i) run.estimate[i] = flip * tomo.estimate[i];
  }

  std::vector<std::pair<int, double>> sums;  // (count, abs err) per n
  for (const Run& run : runs) {
    for (int i = 0; i < run.n; ++i) {
      report.rows.push_back({run.n, run.trial, i, run.exact[i], run.estimate[i],
                             config.exact ? 0 : config.shots, config.noise.depolarizing_p});
    }
    report.circuits_executed += 3;
    if (!config.exact) report.total_measurements += 3 * config.shots;
  }
  for (int n : config.qubit_counts) {
    double err = 0;
    long cnt = 0;
    for (const BenchmarkRow& row : report.rows)
      if (row.n == n) {
        err += std::fabs(row.estimated_value - row.exact_value);
        ++cnt;
      }
    report.mean_abs_error_by_n.emplace_back(n, cnt > 0 ? err / cnt : 0.0);
  }
  return report;
}

std::string benchmark_csv(const BenchmarkReport& report) {
  std::ostringstream out;
  out << "n,trial,component,exact_value,estimated_value,shots,noise_p\n";
  out.precision(12);
  for (const BenchmarkRow& r : report.rows)
    out << r.n << ',' << r.trial << ',' << r.component << ',' << r.exact_value << ','
        << r.estimated_value << ',' << r.shots << ',' << r.noise_p << '\n';
  return out.str();
}

nlohmann::json benchmark_summary(const BenchmarkReport& report) {
  nlohmann::json by_n = nlohmann::json::array();
  for (auto [n, err] : report.mean_abs_error_by_n)
    by_n.push_back({{"qubits", n}, {"mean_abs_error", err}});
  return nlohmann::json{
      {"circuits_executed", report.circuits_executed},
      {"total_measurements", report.total_measurements},
      {"shots_per_circuit", report.config.exact ? 0 : report.config.shots},
      {"trials_per_qubit_count", report.config.trials},
      {"qubit_counts", report.config.qubit_counts},
      {"noise", {{"depolarizing_p", report.config.noise.depolarizing_p},
                 {"readout_flip_q", report.config.noise.readout_flip_q}}},
      {"exact_mode", report.config.exact},
      {"seed", report.config.seed},
      {"mean_abs_error_by_n", by_n},
  };
}

}  // namespace qvrp::qsim
