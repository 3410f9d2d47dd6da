#pragma once

#include <cstdint>
#include <string_view>

namespace rmt {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Independent sub-seed for a named stream ("init", "data", "gate", ...).
constexpr std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view stream) noexcept {
  std::uint64_t h = splitmix64(run_seed);
  for (char c : stream) h = splitmix64(h ^ static_cast<unsigned char>(c));
  return h;
}

// Uniform double in [0, 1) that depends only on (seed, step, index), so a
// field of samples can be drawn in any order.
constexpr double counter_uniform(std::uint64_t seed, std::uint64_t step, std::uint64_t index) noexcept {
  const std::uint64_t h = splitmix64(splitmix64(seed ^ splitmix64(step)) ^ index);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace rmt
