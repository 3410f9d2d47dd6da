#include <doctest.h>

#include <cmath>
#include <cstring>
#include <cstdlib>
#include <random>
#include <string_view>
#include <vector>

#include "rmt/kernels.hpp"

using namespace rmt;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Gradients with exact zeros, signed zeros and mixed signs.
std::vector<double> gradient_like(std::size_t n, std::mt19937_64& rng) {
  std::vector<double> v = random_vec(n, rng);
  std::uniform_int_distribution<int> pick(0, 9);
  for (double& x : v) {
    const int k = pick(rng);
    if (k == 0) x = 0.0;
    if (k == 1) x = -0.0;
  }
  return v;
}

}  // namespace

TEST_CASE("scalar kernels compute the reference definitions") {
  const auto& k = kernels::scalar();
  const double a[] = {1, 2, 3, 4, 5, 6};  // 2x3
  const double b[] = {1, 0, 0, 1, 1, 1};  // 3x2
  double c[4];
  k.gemm_nn(a, b, c, 2, 3, 2);
  CHECK(c[0] == 4);
  CHECK(c[1] == 5);
  CHECK(c[2] == 10);
  CHECK(c[3] == 11);

  const double m[] = {0.004, 0.005, 0.0051, -1.0};
  double out[4];
  k.threshold(m, 0.005, out, 4);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);  // strict
  CHECK(out[2] == 1.0);
  CHECK(out[3] == 0.0);

  const double p[] = {0.7, 0.2, 1.0};
  const double u[] = {0.5, 0.2, 0.999};
  k.gate_scale(p, u, 0.3, out, 3);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 0.7);  // P > U is strict
  CHECK(out[2] == 1.0);
}

TEST_CASE("the active table is a known variant") {
  const auto& a = kernels::active();
  CHECK((a.name == "scalar" || a.name == "avx2"));
  if (const char* env = std::getenv("RMT_KERNELS"); env && std::string_view(env) == "scalar") CHECK(a.name == "scalar");
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  const kernels::KernelTable* v = kernels::avx2();
  if (!v) {
    MESSAGE("AVX2 variant unavailable on this machine; nothing to compare");
    return;
  }
  const auto& s = kernels::scalar();
  std::mt19937_64 rng(4242);

  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 15u, 16u, 17u, 31u, 64u, 1000u, 1027u}) {
    CAPTURE(n);
    const auto x = random_vec(n, rng);
    const auto y = random_vec(n, rng);

    std::vector<double> hs(n), hv(n);
    s.hadamard(x.data(), y.data(), hs.data(), n);
    v->hadamard(x.data(), y.data(), hv.data(), n);
    CHECK(same_bits(hs, hv));

    std::vector<double> as = y, av = y;
    s.axpy(-0.37, x.data(), as.data(), n);
    v->axpy(-0.37, x.data(), av.data(), n);
    CHECK(same_bits(as, av));

    std::vector<double> ts(n), tv(n);
    const auto m = random_vec(n, rng, 0.0, 0.01);
    s.threshold(m.data(), 0.005, ts.data(), n);
    v->threshold(m.data(), 0.005, tv.data(), n);
    CHECK(same_bits(ts, tv));

    const auto gce = gradient_like(n, rng);
    const auto gkl = gradient_like(n, rng);
    std::vector<double> ps(n), pv(n);
    s.purity(gce.data(), gkl.data(), ps.data(), n);
    v->purity(gce.data(), gkl.data(), pv.data(), n);
    CHECK(same_bits(ps, pv));

    const auto uu = random_vec(n, rng, 0.0, 1.0);
    std::vector<double> gs(n), gv(n);
    s.gate_scale(ps.data(), uu.data(), 0.3, gs.data(), n);
    v->gate_scale(ps.data(), uu.data(), 0.3, gv.data(), n);
    CHECK(same_bits(gs, gv));

    std::vector<double> p1 = x, p2 = x, m1(n, 0.0), m2(n, 0.0), v1(n, 0.0), v2(n, 0.0);
    for (int t = 1; t <= 3; ++t) {
      const kernels::AdamCoeffs c{1e-3, 0.9, 0.999, 1e-8, 1.0 - std::pow(0.9, t), 1.0 - std::pow(0.999, t)};
      const auto g = random_vec(n, rng);
      s.adam(p1.data(), m1.data(), v1.data(), g.data(), n, c);
      v->adam(p2.data(), m2.data(), v2.data(), g.data(), n, c);
    }
    CHECK(same_bits(p1, p2));
    CHECK(same_bits(m1, m2));
    CHECK(same_bits(v1, v2));

    const double ds = s.dot(x.data(), y.data(), n);
    const double dv = v->dot(x.data(), y.data(), n);
    CHECK(std::abs(ds - dv) <= 1e-14 * (1.0 + static_cast<double>(n)));
  }

  const std::size_t dims[][3] = {{1, 1, 1}, {3, 5, 7}, {8, 32, 32}, {17, 9, 13}, {32, 64, 40}, {5, 1, 6}};
  for (const auto& [m, k, n] : dims) {
    CAPTURE(m);
    CAPTURE(k);
    CAPTURE(n);
    const auto a = random_vec(m * k, rng);
    const auto b = random_vec(k * n, rng);
    const auto bt = random_vec(n * k, rng);
    const auto at = random_vec(k * m, rng);
    std::vector<double> cs(m * n), cv(m * n);
    const double tol = 1e-14 * static_cast<double>(k + 1);

    s.gemm_nn(a.data(), b.data(), cs.data(), m, k, n);
    v->gemm_nn(a.data(), b.data(), cv.data(), m, k, n);
    for (std::size_t i = 0; i < cs.size(); ++i) CHECK(std::abs(cs[i] - cv[i]) <= tol);

    s.gemm_nt(a.data(), bt.data(), cs.data(), m, k, n);
    v->gemm_nt(a.data(), bt.data(), cv.data(), m, k, n);
    for (std::size_t i = 0; i < cs.size(); ++i) CHECK(std::abs(cs[i] - cv[i]) <= tol);

    s.gemm_tn(at.data(), b.data(), cs.data(), m, k, n);
    v->gemm_tn(at.data(), b.data(), cv.data(), m, k, n);
    for (std::size_t i = 0; i < cs.size(); ++i) CHECK(std::abs(cs[i] - cv[i]) <= tol);
  }
}
