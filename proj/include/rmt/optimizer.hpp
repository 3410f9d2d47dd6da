#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace rmt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam state for one parameter tensor.
class AdamState {
 public:
  AdamState() = default;
  AdamState(std::size_t size, AdamConfig config = {});

  // param -= lr * m_hat / (sqrt(v_hat) + eps)
  void step(std::span<double> param, std::span<const double> grad, double lr);
  std::uint64_t steps() const noexcept { return t_; }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t t_ = 0;
};

enum class Schedule { constant, cosine };

// Learning rate for 0-based step `step` of `total`: cosine annealing from base
// to 0 without restarts (base at step 0, 0 reached after the final step).
double scheduled_lr(Schedule schedule, double base, std::uint64_t step, std::uint64_t total);

}  // namespace rmt
