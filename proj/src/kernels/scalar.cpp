#include <algorithm>
#include <cmath>
#include <cstring>

#include "rmt/kernels.hpp"

namespace rmt::kernels {
namespace {

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = dot(a + i * k, b + j * k, k);
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

void hadamard(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void threshold(const double* m, double alpha, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = m[i] > alpha ? 1.0 : 0.0;
}

void purity(const double* g_ce, const double* g_kl, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double a = g_ce[i];
    const double b = g_kl[i];
    const bool ce_up = a > 0.0 && b < 0.0;
    const bool ce_down = a < 0.0 && b > 0.0;
    if (!ce_up && !ce_down) {
      out[i] = 1.0;
      continue;
    }
    const double r = (a + b) / (std::abs(a) + std::abs(b));
    const double p = ce_up ? 0.5 * (1.0 + r) : 0.5 * (1.0 - r);
    out[i] = std::min(1.0, std::max(0.0, p));
  }
}

void gate_scale(const double* p, const double* u, double leak, double* out, std::size_t n) {
  const double dropped = 1.0 - leak;
  for (std::size_t i = 0; i < n; ++i) out[i] = p[i] > u[i] ? 1.0 : dropped;
}

void adam(double* param, double* m, double* v, const double* grad, std::size_t n, const AdamCoeffs& c) {
  const double one_minus_b1 = 1.0 - c.beta1;
  const double one_minus_b2 = 1.0 - c.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = c.beta1 * m[i] + one_minus_b1 * g;
    v[i] = c.beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / c.bias_correction1;
    const double v_hat = v[i] / c.bias_correction2;
    param[i] -= c.lr * (m_hat / (std::sqrt(v_hat) + c.eps));
  }
}

const KernelTable kScalar{
    "scalar", gemm_nn, gemm_nt, gemm_tn, dot, hadamard, axpy, threshold, purity, gate_scale, adam,
};

}  // namespace

const KernelTable& scalar() { return kScalar; }

}  // namespace rmt::kernels
