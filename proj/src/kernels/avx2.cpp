// Compiled with -mavx2 -mfma. Only reached through avx2() after a CPU check.

#include <immintrin.h>

#include <cmath>
#include <cstring>

#include "rmt/kernels.hpp"

namespace rmt::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// crow[0..n) += s * brow[0..n)
inline void row_fma(double s, const double* brow, double* crow, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    _mm256_storeu_pd(crow + j, _mm256_fmadd_pd(vs, _mm256_loadu_pd(brow + j), _mm256_loadu_pd(crow + j)));
  }
  for (; j < n; ++j) crow[j] += s * brow[j];
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) row_fma(a[i * k + p], b + p * n, c + i * n, n);
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = dot(a + i * k, b + j * k, k);
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) row_fma(a[p * m + i], b + p * n, c + i * n, n);
  }
}

void hadamard(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void threshold(const double* m, double alpha, double* out, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gt = _mm256_cmp_pd(_mm256_loadu_pd(m + i), va, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(gt, one));
  }
  for (; i < n; ++i) out[i] = m[i] > alpha ? 1.0 : 0.0;
}

void purity(const double* g_ce, const double* g_kl, double* out, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d half = _mm256_set1_pd(0.5);
  const __m256d sign = _mm256_set1_pd(-0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d a = _mm256_loadu_pd(g_ce + i);
    const __m256d b = _mm256_loadu_pd(g_kl + i);
    const __m256d a_pos = _mm256_cmp_pd(a, zero, _CMP_GT_OQ);
    const __m256d a_neg = _mm256_cmp_pd(a, zero, _CMP_LT_OQ);
    const __m256d b_pos = _mm256_cmp_pd(b, zero, _CMP_GT_OQ);
    const __m256d b_neg = _mm256_cmp_pd(b, zero, _CMP_LT_OQ);
    const __m256d ce_up = _mm256_and_pd(a_pos, b_neg);
    const __m256d ce_down = _mm256_and_pd(a_neg, b_pos);
    const __m256d conflict = _mm256_or_pd(ce_up, ce_down);
    const __m256d denom = _mm256_add_pd(_mm256_andnot_pd(sign, a), _mm256_andnot_pd(sign, b));
    const __m256d r = _mm256_div_pd(_mm256_add_pd(a, b), denom);
    const __m256d p_up = _mm256_mul_pd(half, _mm256_add_pd(one, r));
    const __m256d p_down = _mm256_mul_pd(half, _mm256_sub_pd(one, r));
    __m256d p = _mm256_blendv_pd(p_down, p_up, ce_up);
    p = _mm256_min_pd(one, _mm256_max_pd(p, zero));
    _mm256_storeu_pd(out + i, _mm256_blendv_pd(one, p, conflict));
  }
  scalar().purity(g_ce + i, g_kl + i, out + i, n - i);
}

void gate_scale(const double* p, const double* u, double leak, double* out, std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d dropped = _mm256_set1_pd(1.0 - leak);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d keep = _mm256_cmp_pd(_mm256_loadu_pd(p + i), _mm256_loadu_pd(u + i), _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_blendv_pd(dropped, one, keep));
  }
  scalar().gate_scale(p + i, u + i, leak, out + i, n - i);
}

void adam(double* param, double* m, double* v, const double* grad, std::size_t n, const AdamCoeffs& c) {
  const __m256d b1 = _mm256_set1_pd(c.beta1);
  const __m256d b2 = _mm256_set1_pd(c.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - c.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - c.beta2);
  const __m256d bc1 = _mm256_set1_pd(c.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(c.bias_correction2);
  const __m256d lr = _mm256_set1_pd(c.lr);
  const __m256d eps = _mm256_set1_pd(c.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(omb1, g));
    const __m256d vi =
        _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)), _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, bc1);
    const __m256d v_hat = _mm256_div_pd(vi, bc2);
    const __m256d step = _mm256_mul_pd(lr, _mm256_div_pd(m_hat, _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps)));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  scalar().adam(param + i, m + i, v + i, grad + i, n - i, c);
}

}  // namespace

extern const KernelTable kAvx2Table;
const KernelTable kAvx2Table{
    "avx2", gemm_nn, gemm_nt, gemm_tn, dot, hadamard, axpy, threshold, purity, gate_scale, adam,
};

}  // namespace rmt::kernels
