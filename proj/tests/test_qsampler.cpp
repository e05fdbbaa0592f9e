#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "qvrp/errors.hpp"
#include "qvrp/qonn.hpp"
#include "qvrp/qsampler.hpp"
#include "qvrp/stats.hpp"
#include "test_support.hpp"

using namespace qvrp;
using namespace qvrp::qsim;

namespace {

std::vector<double> random_thetas(int n, std::mt19937_64& rng, double scale = 1.5) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> t(n * (n - 1) / 2);
  for (double& v : t) v = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("loader of e1 with an empty pyramid gives the first unary basis state") {
  std::vector<double> e1{1, 0, 0, 0};
  qonn::PyramidCircuit id(4);
  StateVector sv = simulate_state(e1, id);
  auto amps = sv.amplitudes();
  for (size_t i = 0; i < amps.size(); ++i) {
    if (i == 1)
      CHECK(std::abs(amps[i] - std::complex<double>{1.0, 0.0}) < 1e-15);
    else
      CHECK(std::abs(amps[i]) < 1e-15);
  }
}

TEST_CASE("full statevector unary amplitudes match the unary-subspace emulation") {
  std::mt19937_64 rng(3);
  for (int n = 2; n <= 10; n += 2) {
    for (int rep = 0; rep < 5; ++rep) {
      qonn::PyramidCircuit circuit(n, random_thetas(n, rng));
      auto x = test::random_unit_vector(n, rng);
      auto expected = qonn::apply_pyramid(qonn::load_unary(x), circuit);
      StateVector sv = simulate_state(x, circuit);
      double worst = 0, leak = 0;
      auto amps = sv.amplitudes();
      for (size_t idx = 0; idx < amps.size(); ++idx) {
        bool unary = idx != 0 && (idx & (idx - 1)) == 0;
        if (unary) {
          int comp = static_cast<int>(std::countr_zero(idx));
          worst = std::max(worst, std::abs(amps[idx] - std::complex<double>{
                                                           expected.amplitudes[comp], 0.0}));
        } else {
          leak = std::max(leak, std::abs(amps[idx]));
        }
      }
      CHECK(worst < 1e-10);
      CHECK(leak < 1e-10);
    }
  }
}

TEST_CASE("statevector capacity guard") {
  CHECK_THROWS_AS(StateVector(15), CapacityError);
}

TEST_CASE("noiseless sampling frequencies obey the binomial bound") {
  std::mt19937_64 rng(5);
  int n = 6;
  long shots = 500;
  int within = 0, total = 0;
  for (int trial = 0; trial < 20; ++trial) {
    qonn::PyramidCircuit circuit(n, random_thetas(n, rng));
    auto x = test::random_unit_vector(n, rng);
    auto gates = build_circuit(x, circuit);
    StateVector exact = simulate_state(gates, n);
    auto counts = sample_counts(gates, n, shots, NoiseModel{}, 1000 + trial);
    for (int i = 0; i < n; ++i) {
      double p = exact.unary_probability(i);
      double f = static_cast<double>(counts[1ULL << i]) / shots;
      double bound = 3.0 * std::sqrt(p * (1 - p) / shots);
      ++total;
      if (std::fabs(f - p) <= bound || bound == 0.0) ++within;
    }
  }
  CHECK(static_cast<double>(within) / total >= 0.95);
}

TEST_CASE("noiseless counts pass a chi-square goodness-of-fit at the 1% level") {
  std::mt19937_64 rng(7);
  int n = 5;
  long shots = 2000;
  qonn::PyramidCircuit circuit(n, random_thetas(n, rng));
  auto x = test::random_unit_vector(n, rng);
  auto gates = build_circuit(x, circuit);
  StateVector exact = simulate_state(gates, n);
  auto probs = exact.probabilities();
  int rejections = 0;
  for (int rep = 0; rep < 50; ++rep) {
    auto counts = sample_counts(gates, n, shots, NoiseModel{}, 9000 + rep);
    std::vector<double> expected(probs.size());
    for (size_t i = 0; i < probs.size(); ++i) expected[i] = probs[i] * shots;
    if (stats::chi2_gof_pvalue(counts, expected) < 0.01) ++rejections;
  }
  CHECK(rejections <= 3);
}

TEST_CASE("pi/4 comparison circuit reproduces the hand-computed pair probabilities") {
  // components (0.6, -0.8): rotated pair ((x1+x2)/sqrt2, (x2-x1)/sqrt2)
  std::vector<double> x{0.6, -0.8};
  qonn::UnaryState st = qonn::load_unary(x);
  auto stage = comparison_stage(2, 0);
  qonn::apply_gates_unary(st.amplitudes, stage);
  double p1 = st.amplitudes[0] * st.amplitudes[0];
  double p2 = st.amplitudes[1] * st.amplitudes[1];
  CHECK(p1 == doctest::Approx(0.02));
  CHECK(p2 == doctest::Approx(0.98));
  // p1 < p2 implies opposite signs
  auto rel = relative_signs({0.6, 0.8}, {p1, p2}, {}, 0.0);
  REQUIRE(rel.size() == 1);
  CHECK(rel[0] == -1);
}

TEST_CASE("exact tomography recovers the rotated vector") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    int n = 4 + static_cast<int>(rng() % 5);
    qonn::PyramidCircuit circuit(n, random_thetas(n, rng));
    auto x = test::random_unit_vector(n, rng);
    auto y = qonn::qonn_layer(x, circuit);
    auto tomo = tomography_exact(x, circuit);
    REQUIRE(static_cast<int>(tomo.estimate.size()) == n);
    CHECK(tomo.circuits_used == 3);
    // free global sign: compare up to a flip
    double err_p = 0, err_m = 0;
    for (int i = 0; i < n; ++i) {
      err_p = std::max(err_p, std::fabs(tomo.estimate[i] - y[i]));
      err_m = std::max(err_m, std::fabs(tomo.estimate[i] + y[i]));
    }
    CHECK(std::min(err_p, err_m) < 1e-9);
  }
}

TEST_CASE("tomography estimate keeps the first nonzero component non-negative") {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 10; ++rep) {
    qonn::PyramidCircuit circuit(5, random_thetas(5, rng));
    auto x = test::random_unit_vector(5, rng);
    auto tomo = tomography_exact(x, circuit);
    for (double v : tomo.estimate) {
      if (std::fabs(v) > 1e-12) {
        CHECK(v > 0.0);
        break;
      }
    }
  }
}

TEST_CASE("tomography estimate norm is bounded by 1 + 5/sqrt(shots)") {
  std::mt19937_64 rng(17);
  long shots = 64;
  for (int rep = 0; rep < 10; ++rep) {
    qonn::PyramidCircuit circuit(4, random_thetas(4, rng));
    auto x = test::random_unit_vector(4, rng);
    auto tomo = tomography(x, circuit, shots, NoiseModel{}, 500 + rep);
    double nrm = 0;
    for (double v : tomo.estimate) nrm += v * v;
    CHECK(std::sqrt(nrm) <= 1.0 + 5.0 / std::sqrt(static_cast<double>(shots)));
  }
}

TEST_CASE("tomography argument guards") {
  qonn::PyramidCircuit circuit(3);
  std::vector<double> x{1, 0, 0};
  CHECK_THROWS_AS(tomography(x, circuit, 0, NoiseModel{}, 1), ArgumentError);
  CHECK_THROWS_AS((NoiseModel{-0.1, 0.0}).validate(), ArgumentError);
}

TEST_CASE("sampled tomography error shrinks with shot count at rate 1/sqrt(shots)") {
  std::mt19937_64 rng(19);
  int n = 5;
  std::vector<long> shot_levels{100, 1000, 10000};
  std::vector<double> log_shots, log_err;
  for (long shots : shot_levels) {
    double err = 0;
    int trials = 24;
    for (int t = 0; t < trials; ++t) {
      qonn::PyramidCircuit circuit(n, random_thetas(n, rng));
      auto x = test::random_unit_vector(n, rng);
      auto y = qonn::qonn_layer(x, circuit);
      auto tomo = tomography(x, circuit, shots, NoiseModel{}, 7000 + 31 * t + shots);
      double e_p = 0, e_m = 0;
      for (int i = 0; i < n; ++i) {
        e_p += std::fabs(tomo.estimate[i] - y[i]);
        e_m += std::fabs(tomo.estimate[i] + y[i]);
      }
      err += std::min(e_p, e_m) / n;
    }
    log_shots.push_back(std::log10(static_cast<double>(shots)));
    log_err.push_back(std::log10(err / trials));
  }
  auto fit = stats::linear_fit(log_shots, log_err);
  CHECK(fit.slope < -0.35);
  CHECK(fit.slope > -0.65);
}

TEST_CASE("sign cascade: an injected comparison fault flips every downstream sign") {
  std::mt19937_64 rng(23);
  int n = 8;
  qonn::PyramidCircuit circuit(n, random_thetas(n, rng));
  auto x = test::random_unit_vector(n, rng);
  auto y = qonn::qonn_layer(x, circuit);

  std::vector<double> mags(n), p_even(n), p_odd(n);
  StateVector sv1 = simulate_state(build_circuit(x, circuit), n);
  auto with_stage = [&](int offset) {
    auto gates = build_circuit(x, circuit);
    auto stage = comparison_stage(n, offset);
    gates.insert(gates.end(), stage.begin(), stage.end());
    return simulate_state(gates, n);
  };
  StateVector sv2 = with_stage(0);
  StateVector sv3 = with_stage(1);
  for (int i = 0; i < n; ++i) {
    mags[i] = std::sqrt(sv1.unary_probability(i));
    p_even[i] = sv2.unary_probability(i);
    p_odd[i] = sv3.unary_probability(i);
  }
  auto rel = relative_signs(mags, p_even, p_odd, 1e-12);
  auto signs = cascade_signs(rel);

  // exact recovery up to global sign when no component vanishes
  bool all_nonzero = true;
  for (double v : y) all_nonzero = all_nonzero && std::fabs(v) > 1e-12;
  REQUIRE(all_nonzero);
  double flip = signs[0] * mags[0] * y[0] > 0 ? 1.0 : -1.0;
  for (int i = 0; i < n; ++i)
    CHECK(flip * signs[i] * mags[i] == doctest::Approx(y[i]).epsilon(1e-9));

  // fault injection at comparison k
  int k = 3;
  auto faulted = rel;
  faulted[k] = -faulted[k];
  auto fsigns = cascade_signs(faulted);
  for (int i = 0; i <= k; ++i) CHECK(fsigns[i] == signs[i]);
  for (int i = k + 1; i < n; ++i) CHECK(fsigns[i] == -signs[i]);
}

TEST_CASE("unreliable comparisons inherit the previous sign") {
  auto signs = cascade_signs({1, 0, -1, 0});
  CHECK(signs == std::vector<int>{1, 1, 1, -1, -1});
}

TEST_CASE("benchmark in exact mode recovers every component") {
  BenchmarkConfig config;
  config.qubit_counts = {4, 6};
  config.trials = 3;
  config.exact = true;
  config.seed = 99;
  auto report = benchmark_qonn(config);
  CHECK(report.circuits_executed == 2 * 3 * 3);
  CHECK(report.total_measurements == 0);
  for (const auto& row : report.rows)
    CHECK(std::fabs(row.estimated_value - row.exact_value) < 1e-9);
}

TEST_CASE("benchmark with 500 noiseless shots keeps mean error small") {
  BenchmarkConfig config;
  config.qubit_counts = {4};
  config.trials = 100;
  config.shots = 500;
  config.seed = 7;
  auto report = benchmark_qonn(config);
  REQUIRE(report.mean_abs_error_by_n.size() == 1);
  CHECK(report.mean_abs_error_by_n[0].second < 0.1);
  CHECK(report.circuits_executed == 300);
  CHECK(report.total_measurements == 150000);
}

TEST_CASE("mean benchmark error is non-decreasing in the depolarizing rate") {
  std::vector<double> levels{0.0, 0.05, 0.25};
  std::vector<double> errors;
  for (double p : levels) {
    BenchmarkConfig config;
    config.qubit_counts = {4};
    config.trials = 40;
    config.shots = 300;
    config.noise.depolarizing_p = p;
    config.seed = 21;
    auto report = benchmark_qonn(config);
    errors.push_back(report.mean_abs_error_by_n[0].second);
  }
  CHECK(errors[0] <= errors[1] + 1e-9);
  CHECK(errors[1] <= errors[2] + 1e-9);
}

TEST_CASE("benchmark outputs are deterministic given a seed") {
  BenchmarkConfig config;
  config.qubit_counts = {4, 5};
  config.trials = 2;
  config.shots = 100;
  config.seed = 1234;
  auto a = benchmark_qonn(config);
  auto b = benchmark_qonn(config);
  CHECK(benchmark_csv(a) == benchmark_csv(b));
  CHECK(benchmark_summary(a) == benchmark_summary(b));
}
