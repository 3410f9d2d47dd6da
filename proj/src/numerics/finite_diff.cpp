#include "rmt/finite_diff.hpp"

#include <algorithm>

namespace rmt {

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_max_error(const Tensor& a, const Tensor& b) {
  const double diff = max_abs_diff(a, b);
  const double scale = max_abs(b);
  return scale > 0.0 ? diff / scale : diff;
}

}  // namespace rmt
