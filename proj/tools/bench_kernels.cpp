// Timing comparison between the serial reference kernels and their OpenMP
// counterparts. Prints one table row per problem size.

#include <chrono>
#include <complex>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "qvrp/kernels.hpp"

using namespace qvrp::kernels;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(int reps, const std::function<void()>& fn) {
  fn();  // warm up
  auto start = Clock::now();
  for (int r = 0; r < reps; ++r) fn();
  auto stop = Clock::now();
  return std::chrono::duration<double, std::milli>(stop - start).count() / reps;
}

}  // namespace

int main() {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> dist(0.0, 1.0);

  std::printf("workers: %d\n\n", worker_count());
  std::printf("%-28s %12s %12s %9s\n", "kernel", "serial ms", "parallel ms", "speedup");

  for (int n : {64, 128, 256, 512}) {
    std::vector<double> a(static_cast<size_t>(n) * n), b(a.size()), out(a.size());
    for (double& v : a) v = dist(rng);
    for (double& v : b) v = dist(rng);
    int reps = n <= 128 ? 50 : 10;
    double ts = time_ms(reps, [&] { matmul_nn_serial(a.data(), b.data(), out.data(), n, n, n); });
    double tp = time_ms(reps, [&] { matmul_nn_parallel(a.data(), b.data(), out.data(), n, n, n); });
    std::printf("%-10s n=%-15d %12.3f %12.3f %8.2fx\n", "matmul_nn", n, ts, tp, ts / tp);
  }

  for (int nq : {10, 12, 14}) {
    std::vector<std::complex<double>> amp(size_t{1} << nq);
    for (auto& v : amp) v = {dist(rng), dist(rng)};
    int reps = 200;
    double ts = time_ms(reps, [&] {
      for (int g = 0; g + 1 < nq; ++g)
        rbs_sweep_serial(amp.data(), nq, g, g + 1, 0.8, 0.6);
    });
    double tp = time_ms(reps, [&] {
      for (int g = 0; g + 1 < nq; ++g)
        rbs_sweep_parallel(amp.data(), nq, g, g + 1, 0.8, 0.6);
    });
    std::printf("%-10s n=%-15d %12.3f %12.3f %8.2fx\n", "rbs_sweep", nq, ts, tp, ts / tp);
  }
  return 0;
}
