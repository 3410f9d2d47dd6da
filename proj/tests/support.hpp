#pragma once

#include <random>

#include "rmt/tensor.hpp"

namespace rmt::test {

// Uniform entries in [lo, hi).
inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) { return a.identical(b); }

}  // namespace rmt::test
