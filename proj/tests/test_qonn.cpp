#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "qvrp/autodiff.hpp"
#include "qvrp/errors.hpp"
#include "qvrp/qonn.hpp"
#include "test_support.hpp"

using namespace qvrp;
using namespace qvrp::qonn;

namespace {

// Test-side determinant via Gaussian elimination with partial pivoting.
double determinant(Tensor m) {
  int n = m.rows();
  double det = 1.0;
  for (int c = 0; c < n; ++c) {
    int piv = c;
    for (int r = c + 1; r < n; ++r)
      if (std::fabs(m.at(r, c)) > std::fabs(m.at(piv, c))) piv = r;
    if (piv != c) {
      for (int k = 0; k < n; ++k) std::swap(m.at(c, k), m.at(piv, k));
      det = -det;
    }
    if (m.at(c, c) == 0.0) return 0.0;
    det *= m.at(c, c);
    for (int r = c + 1; r < n; ++r) {
      double f = m.at(r, c) / m.at(c, c);
      for (int k = c; k < n; ++k) m.at(r, k) -= f * m.at(c, k);
    }
  }
  return det;
}

double max_orthogonality_defect(const Tensor& w) {
  int n = w.rows();
  double worst = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double dot = 0;
      for (int k = 0; k < n; ++k) dot += w.at(k, i) * w.at(k, j);
      worst = std::max(worst, std::fabs(dot - (i == j ? 1.0 : 0.0)));
    }
  return worst;
}

std::vector<double> random_thetas(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-std::numbers::pi, std::numbers::pi);
  std::vector<double> t(n * (n - 1) / 2);
  for (double& v : t) v = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("pyramid layout matches the four-qubit reference ordering") {
  auto pairs = pyramid_pairs(4);
  GatePairs expected{{0, 1}, {1, 2}, {0, 1}, {2, 3}, {1, 2}, {0, 1}};
  CHECK(pairs == expected);
}

TEST_CASE("pyramid parameter count is n(n-1)/2") {
  for (int n = 1; n <= 16; ++n) {
    PyramidCircuit c(n);
    CHECK(c.parameter_count() == n * (n - 1) / 2);
    CHECK(static_cast<int>(c.gates().size()) == n * (n - 1) / 2);
  }
}

TEST_CASE("loader angles for basis and symmetric inputs") {
  std::vector<double> e1{1, 0, 0, 0};
  auto a = loader_angles(e1);
  REQUIRE(a.size() == 3);
  for (double v : a) CHECK(v == 0.0);

  double r = 1.0 / std::sqrt(2.0);
  std::vector<double> sym{r, r};
  auto b = loader_angles(sym);
  REQUIRE(b.size() == 1);
  CHECK(b[0] == doctest::Approx(std::numbers::pi / 4));
}

TEST_CASE("loader rejects bad inputs") {
  std::vector<double> zero{0, 0, 0};
  CHECK_THROWS_AS(loader_angles(zero), DegenerateInputError);
  std::vector<double> long_vec{0.9, 0.9};
  CHECK_THROWS_AS(loader_angles(long_vec), NormalizationError);
}

TEST_CASE("loader replay reproduces random unit vectors") {
  std::mt19937_64 rng(5);
  for (int n = 2; n <= 12; ++n) {
    for (int rep = 0; rep < 100; ++rep) {
      auto x = test::random_unit_vector(n, rng);
      UnaryState st = load_unary(x);
      CHECK(std::fabs(st.norm() - 1.0) < 1e-10);
      double worst = 0;
      for (int i = 0; i < n; ++i) worst = std::max(worst, std::fabs(st.amplitudes[i] - x[i]));
      CHECK(worst < 1e-10);
    }
  }
}

TEST_CASE("identity pyramid leaves states unchanged") {
  PyramidCircuit c(5);
  UnaryState st{{0.1, -0.3, 0.5, 0.2, std::sqrt(1 - 0.39)}};
  UnaryState out = apply_pyramid(st, c);
  for (int i = 0; i < 5; ++i) CHECK(out.amplitudes[i] == st.amplitudes[i]);
}

TEST_CASE("two-qubit pyramid at theta = pi/2 permutes components") {
  PyramidCircuit c(2, {std::numbers::pi / 2});
  UnaryState up{{0, 1}};
  UnaryState down{{1, 0}};
  auto a = apply_pyramid(up, c);
  CHECK(a.amplitudes[0] == doctest::Approx(1.0));
  CHECK(std::fabs(a.amplitudes[1]) < 1e-15);
  auto b = apply_pyramid(down, c);
  CHECK(std::fabs(b.amplitudes[0]) < 1e-15);
  CHECK(b.amplitudes[1] == doctest::Approx(-1.0));
}

TEST_CASE("apply_pyramid agrees with the extracted matrix") {
  std::mt19937_64 rng(7);
  PyramidCircuit c(6, random_thetas(6, rng));
  Tensor w = extract_orthogonal_matrix(c);
  for (int rep = 0; rep < 20; ++rep) {
    auto x = test::random_unit_vector(6, rng);
    UnaryState out = apply_pyramid(UnaryState{{x.begin(), x.end()}}, c);
    double worst = 0;
    for (int i = 0; i < 6; ++i) {
      double wx = 0;
      for (int j = 0; j < 6; ++j) wx += w.at(i, j) * x[j];
      worst = std::max(worst, std::fabs(wx - out.amplitudes[i]));
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("apply_pyramid rejects mismatched lengths") {
  PyramidCircuit c(4);
  UnaryState st{{1, 0, 0}};
  CHECK_THROWS_AS(apply_pyramid(st, c), DimensionError);
}

TEST_CASE("extracted matrix special cases") {
  PyramidCircuit id(3);
  CHECK(max_abs_diff(extract_orthogonal_matrix(id), Tensor::identity(3)) == 0.0);

  double r = std::sqrt(2.0) / 2.0;
  PyramidCircuit c(2, {std::numbers::pi / 4});
  Tensor w = extract_orthogonal_matrix(c);
  CHECK(w.at(0, 0) == doctest::Approx(r));
  CHECK(w.at(0, 1) == doctest::Approx(r));
  CHECK(w.at(1, 0) == doctest::Approx(-r));
  CHECK(w.at(1, 1) == doctest::Approx(r));
}

TEST_CASE("extracted matrices are orthogonal with unit determinant magnitude") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    PyramidCircuit c(8, random_thetas(8, rng));
    Tensor w = extract_orthogonal_matrix(c);
    CHECK(max_orthogonality_defect(w) < 1e-10);
    CHECK(std::fabs(std::fabs(determinant(w)) - 1.0) < 1e-8);
  }
}

TEST_CASE("norm is conserved for arbitrary angles") {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 50; ++rep) {
    int n = 2 + static_cast<int>(rng() % 9);
    PyramidCircuit c(n, random_thetas(n, rng));
    auto x = test::random_unit_vector(n, rng);
    UnaryState out = apply_pyramid(UnaryState{{x.begin(), x.end()}}, c);
    CHECK(std::fabs(out.norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("composed pyramids stay orthogonal") {
  std::mt19937_64 rng(17);
  PyramidCircuit c1(5, random_thetas(5, rng));
  PyramidCircuit c2(5, random_thetas(5, rng));
  // columns of W2*W1 via composed application
  Tensor composed({5, 5});
  for (int j = 0; j < 5; ++j) {
    std::vector<double> col(5, 0.0);
    col[j] = 1.0;
    apply_gates_unary(col, c1.gates());
    apply_gates_unary(col, c2.gates());
    for (int i = 0; i < 5; ++i) composed.at(i, j) = col[i];
  }
  CHECK(max_orthogonality_defect(composed) < 1e-10);
}

TEST_CASE("qonn_layer handles zero, scaled and random vectors") {
  std::mt19937_64 rng(19);
  PyramidCircuit c(8, random_thetas(8, rng));

  std::vector<double> zero(8, 0.0);
  auto out = qonn_layer(zero, c);
  for (double v : out) CHECK(v == 0.0);

  PyramidCircuit id(4);
  std::vector<double> scaled{3, 0, 0, 0};
  auto ident = qonn_layer(scaled, id);
  CHECK(ident[0] == 3.0);

  Tensor w = extract_orthogonal_matrix(c);
  std::normal_distribution<double> dist(0.0, 2.0);
  std::vector<double> v(8);
  for (double& x : v) x = dist(rng);
  auto y = qonn_layer(v, c);
  for (int i = 0; i < 8; ++i) {
    double wx = 0;
    for (int j = 0; j < 8; ++j) wx += w.at(i, j) * v[j];
    CHECK(std::fabs(wx - y[i]) < 1e-10);
  }
}

TEST_CASE("pyramid tape op gradient matches finite differences") {
  std::mt19937_64 rng(23);
  PyramidCircuit proto(6);
  auto pairs = proto.pairs();
  Tensor thetas({1, proto.parameter_count()});
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  for (int64_t i = 0; i < thetas.size(); ++i) thetas.at(i) = dist(rng);
  Tensor x({3, 6});
  for (int64_t i = 0; i < x.size(); ++i) x.at(i) = dist(rng);
  Tensor w({3, 6});
  for (int64_t i = 0; i < w.size(); ++i) w.at(i) = dist(rng);

  auto run = [&](bool want_grads) -> std::vector<Tensor> {
    ad::Tape tape;
    ad::Var vx = tape.input(x, true);
    ad::Var vt = tape.input(thetas, true);
    ad::Var y = tape.pyramid_apply(vx, vt, pairs);
    ad::Var loss = tape.sum(tape.hadamard(y, tape.input(w, false)));
    if (!want_grads) return {Tensor::scalar(tape.value(loss).at(int64_t{0}))};
    tape.backward(loss);
    return {tape.grad(vx), tape.grad(vt)};
  };
  auto rep = test::fd_check([&]() { return run(false)[0].at(int64_t{0}); }, {&x, &thetas},
                            [&]() { return run(true); });
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("circuit serialization round-trips") {
  std::mt19937_64 rng(29);
  PyramidCircuit c(5, random_thetas(5, rng));
  auto j = c.to_json();
  CHECK(j.at("n").get<int>() == 5);
  PyramidCircuit back = PyramidCircuit::from_json(j);
  CHECK(back.qubit_count() == 5);
  for (int i = 0; i < c.parameter_count(); ++i) CHECK(back.thetas()[i] == c.thetas()[i]);
}
