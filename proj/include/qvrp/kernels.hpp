#pragma once

#include <complex>
#include <cstdint>

namespace qvrp::kernels {

// Hot inner loops used by the autodiff engine and the statevector simulator.
// Each kernel has a serial reference and an OpenMP variant; the unsuffixed
// entry point dispatches on problem size and the configured worker count.
// The parallel variants partition work so that every output element is
// computed by exactly one thread with the same arithmetic as the serial
// reference, so results are identical bit for bit.

int worker_count();
void set_worker_count(int n);

// out[m,n] = a[m,k] * b[k,n]
void matmul_nn_serial(const double* a, const double* b, double* out, int m, int k, int n);
void matmul_nn_parallel(const double* a, const double* b, double* out, int m, int k, int n);
void matmul_nn(const double* a, const double* b, double* out, int m, int k, int n);

// out[m,n] = a[m,k] * b[n,k]^T
void matmul_nt_serial(const double* a, const double* b, double* out, int m, int k, int n);
void matmul_nt_parallel(const double* a, const double* b, double* out, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* out, int m, int k, int n);

// out[m,n] += a[k,m]^T * b[k,n]  (accumulating; used by matmul backward)
void matmul_tn_acc_serial(const double* a, const double* b, double* out, int m, int k, int n);
void matmul_tn_acc_parallel(const double* a, const double* b, double* out, int m, int k, int n);
void matmul_tn_acc(const double* a, const double* b, double* out, int m, int k, int n);

// Planar rotation on a full 2^n statevector: for every basis index with
// qubit qa set and qb clear, mix it with the partner index (qa clear, qb set)
// as [c s; -s c]. Indices with both or neither qubit set are untouched.
void rbs_sweep_serial(std::complex<double>* amp, int n_qubits, int qa, int qb,
                      double cos_t, double sin_t);
void rbs_sweep_parallel(std::complex<double>* amp, int n_qubits, int qa, int qb,
                        double cos_t, double sin_t);
void rbs_sweep(std::complex<double>* amp, int n_qubits, int qa, int qb,
               double cos_t, double sin_t);

}  // namespace qvrp::kernels
