#pragma once

#include <functional>

#include "rmt/tensor.hpp"

namespace rmt {

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element of x.
// Test oracle; independent of the tape.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-6);

// max_i |a_i - b_i| / max_i |b_i|, the error of `a` relative to the largest
// reference entry. Falls back to the absolute error when b is all zero.
double relative_max_error(const Tensor& a, const Tensor& b);

}  // namespace rmt
