#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference version and,
// on x86-64 with AVX2+FMA, a vectorized variant. The active table is chosen
// once per process: AVX2 when the CPU supports it, unless the environment
// variable RMT_KERNELS=scalar forces the reference path.
//
// Elementwise kernels (hadamard, axpy, threshold, purity, gate_scale, adam) are
// bitwise-identical across variants. Reductions (dot, gemm_*) agree to
// rounding only: the vector variants use FMA and a different summation order.

#include <cstddef>
#include <string_view>

namespace rmt::kernels {

struct AdamCoeffs {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  std::string_view name;

  // c[m x n] = a[m x k] * b[k x n]
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
  // c[m x n] = a[m x k] * b[n x k]^T
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
  // c[m x n] = a[k x m]^T * b[k x n]
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

  double (*dot)(const double* a, const double* b, std::size_t n);
  // out = a * b elementwise
  void (*hadamard)(const double* a, const double* b, double* out, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out = (m > alpha) ? 1 : 0
  void (*threshold)(const double* m, double alpha, double* out, std::size_t n);
  // Gradient retaining purity, piecewise form, clamped to [0, 1].
  void (*purity)(const double* g_ce, const double* g_kl, double* out, std::size_t n);
  // out = (p > u) ? 1 : 1 - leak
  void (*gate_scale)(const double* p, const double* u, double leak, double* out, std::size_t n);
  // Bias-corrected Adam update of param in place.
  void (*adam)(double* param, double* m, double* v, const double* grad, std::size_t n, const AdamCoeffs& c);
};

const KernelTable& scalar();
// nullptr when the variant was not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2();
const KernelTable& active();

}  // namespace rmt::kernels
