#include "rmt/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "rmt/errors.hpp"
#include "rmt/kernels.hpp"

namespace rmt {

AdamState::AdamState(std::size_t size, AdamConfig config) : config_(config), m_(size, 0.0), v_(size, 0.0) {}

void AdamState::step(std::span<double> param, std::span<const double> grad, double lr) {
  if (param.size() != m_.size() || grad.size() != m_.size()) throw DimensionError("Adam state size mismatch");
  ++t_;
  const kernels::AdamCoeffs c{
      lr,
      config_.beta1,
      config_.beta2,
      config_.eps,
      1.0 - std::pow(config_.beta1, static_cast<double>(t_)),
      1.0 - std::pow(config_.beta2, static_cast<double>(t_)),
  };
  kernels::active().adam(param.data(), m_.data(), v_.data(), grad.data(), param.size(), c);
}

double scheduled_lr(Schedule schedule, double base, std::uint64_t step, std::uint64_t total) {
  if (schedule == Schedule::constant || total == 0) return base;
  const double progress = static_cast<double>(step) / static_cast<double>(total);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace rmt
