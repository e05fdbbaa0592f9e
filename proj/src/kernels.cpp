#include "qvrp/kernels.hpp"

#include <atomic>

#ifdef QVRP_OPENMP
#include <omp.h>
#endif

namespace qvrp::kernels {

namespace {

std::atomic<int> g_workers{0};  // 0 = library default

inline bool use_parallel(int64_t flops) {
#ifdef QVRP_OPENMP
  return worker_count() > 1 && flops >= (1 << 16);
#else
  (void)flops;
  return false;
#endif
}

}  // namespace

int worker_count() {
  int w = g_workers.load(std::memory_order_relaxed);
  if (w > 0) return w;
#ifdef QVRP_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_worker_count(int n) { g_workers.store(n < 1 ? 1 : n, std::memory_order_relaxed); }

void matmul_nn_serial(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* orow = out + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = 0.0;
    const double* arow = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      const double* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_nn_parallel(const double* a, const double* b, double* out, int m, int k, int n) {
#ifdef QVRP_OPENMP
#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (int i = 0; i < m; ++i) {
    double* orow = out + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = 0.0;
    const double* arow = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      const double* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
#else
  matmul_nn_serial(a, b, out, m, k, n);
#endif
}

void matmul_nn(const double* a, const double* b, double* out, int m, int k, int n) {
  if (use_parallel(static_cast<int64_t>(m) * k * n))
    matmul_nn_parallel(a, b, out, m, k, n);
  else
    matmul_nn_serial(a, b, out, m, k, n);
}

void matmul_nt_serial(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<int64_t>(i) * k;
    double* orow = out + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<int64_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      orow[j] = s;
    }
  }
}

void matmul_nt_parallel(const double* a, const double* b, double* out, int m, int k, int n) {
#ifdef QVRP_OPENMP
#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<int64_t>(i) * k;
    double* orow = out + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<int64_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      orow[j] = s;
    }
  }
#else
  matmul_nt_serial(a, b, out, m, k, n);
#endif
}

void matmul_nt(const double* a, const double* b, double* out, int m, int k, int n) {
  if (use_parallel(static_cast<int64_t>(m) * k * n))
    matmul_nt_parallel(a, b, out, m, k, n);
  else
    matmul_nt_serial(a, b, out, m, k, n);
}

void matmul_tn_acc_serial(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* orow = out + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = a[static_cast<int64_t>(p) * m + i];
      const double* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_tn_acc_parallel(const double* a, const double* b, double* out, int m, int k, int n) {
#ifdef QVRP_OPENMP
#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (int i = 0; i < m; ++i) {
    double* orow = out + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = a[static_cast<int64_t>(p) * m + i];
      const double* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
#else
  matmul_tn_acc_serial(a, b, out, m, k, n);
#endif
}

void matmul_tn_acc(const double* a, const double* b, double* out, int m, int k, int n) {
  if (use_parallel(static_cast<int64_t>(m) * k * n))
    matmul_tn_acc_parallel(a, b, out, m, k, n);
  else
    matmul_tn_acc_serial(a, b, out, m, k, n);
}

void rbs_sweep_serial(std::complex<double>* amp, int n_qubits, int qa, int qb,
                      double cos_t, double sin_t) {
  const uint64_t bit_a = 1ULL << qa;
  const uint64_t bit_b = 1ULL << qb;
  const uint64_t dim = 1ULL << n_qubits;
  for (uint64_t idx = 0; idx < dim; ++idx) {
    if ((idx & bit_a) && !(idx & bit_b)) {
      uint64_t partner = (idx & ~bit_a) | bit_b;
      std::complex<double> xa = amp[idx];
      std::complex<double> xb = amp[partner];
      amp[idx] = cos_t * xa + sin_t * xb;
      amp[partner] = -sin_t * xa + cos_t * xb;
    }
  }
}

void rbs_sweep_parallel(std::complex<double>* amp, int n_qubits, int qa, int qb,
                        double cos_t, double sin_t) {
#ifdef QVRP_OPENMP
  const uint64_t bit_a = 1ULL << qa;
  const uint64_t bit_b = 1ULL << qb;
  const int64_t dim = 1LL << n_qubits;
#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (int64_t s = 0; s < dim; ++s) {
    uint64_t idx = static_cast<uint64_t>(s);
    if ((idx & bit_a) && !(idx & bit_b)) {
      uint64_t partner = (idx & ~bit_a) | bit_b;
      std::complex<double> xa = amp[idx];
      std::complex<double> xb = amp[partner];
      amp[idx] = cos_t * xa + sin_t * xb;
      amp[partner] = -sin_t * xa + cos_t * xb;
    }
  }
#else
  rbs_sweep_serial(amp, n_qubits, qa, qb, cos_t, sin_t);
#endif
}

void rbs_sweep(std::complex<double>* amp, int n_qubits, int qa, int qb,
               double cos_t, double sin_t) {
  if (n_qubits >= 13 && use_parallel(1LL << n_qubits))
    rbs_sweep_parallel(amp, n_qubits, qa, qb, cos_t, sin_t);
  else
    rbs_sweep_serial(amp, n_qubits, qa, qb, cos_t, sin_t);
}

}  // namespace qvrp::kernels
