#pragma once

// Gradient dropout regularity: per mask element, the agreement ("purity")
// between the task (CE) gradient and the zero-shot KL gradient decides how
// likely the task gradient is to survive this step.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rmt/model.hpp"
#include "rmt/tensor.hpp"

namespace rmt {

// Piecewise purity: 1 when the gradients agree in sign (or either is zero),
// otherwise (1 ± (g_ce + g_kl) / (|g_ce| + |g_kl|)) / 2 with the sign of g_ce.
double purity(double g_ce, double g_kl);
// Compact sign form 0.5 * (1 + sgn(g_ce) (g_ce + g_kl) / (|g_ce| + |g_kl|)).
// Differs from purity() only when g_ce == 0 (gives 0.5 there).
double purity_compact(double g_ce, double g_kl);
Tensor purity(const Tensor& g_ce, const Tensor& g_kl);

void validate_leak(double leak);

// Seeded source of the per-element uniforms U. Draws are addressed by
// (step, global element index) and independent of evaluation order.
class GateStream {
 public:
  explicit GateStream(std::uint64_t seed) : seed_(seed) {}
  std::uint64_t seed() const noexcept { return seed_; }
  // U for elements [offset, offset + shape_size(shape)) at `step`.
  Tensor uniforms(std::uint64_t step, std::uint64_t offset, const Shape& shape) const;

 private:
  std::uint64_t seed_;
};

// gate = 1 where P > U.
Tensor sample_gate(const Tensor& purity, const Tensor& uniforms);
Tensor sample_gate(const Tensor& purity, const GateStream& stream, std::uint64_t step, std::uint64_t offset);

// 1 - l + l * gate, evaluated as {1 - l, 1}.
Tensor leaky_scale(const Tensor& gate, double leak);
// 1 - l * (1 - gate), the same factor written as a dropout of the leak.
Tensor dropout_factor(const Tensor& gate, double leak);

struct PurityField {
  Tensor g_ce;
  Tensor g_kl;
  Tensor purity;
  Tensor uniform;
  Tensor gate;
  Tensor scale;
  // scale ⊙ g_ce
  Tensor final_gradient() const;
};

PurityField purity_field(const Tensor& g_ce, const Tensor& g_kl, double leak, const GateStream& stream,
                         std::uint64_t step, std::uint64_t offset);

// Plain gradient-descent form: M - lr * scale ⊙ g_ce.
Tensor regularized_step(const Tensor& mask, const Tensor& g_ce, const Tensor& g_kl, double leak, double lr,
                        const GateStream& stream, std::uint64_t step, std::uint64_t offset);

// Straight-through gradient of KL(reference || masked model) for every enabled
// layer (canonical order; empty tensors for the others). Throws StateError
// without a reference.
std::vector<Tensor> kl_gradient_field(const DualEncoder& model, const Tensor& tokens, std::size_t seq_len,
                                      const Tensor* reference, std::span<const int> classes = {},
                                      bool bypass_blocks = false);

// One line of the optional per-step diagnostic dump.
struct GateDiagnostics {
  std::uint64_t step = 0;
  std::string layer;
  double mean_purity = 0.0;
  double gate_rate = 0.0;
  double mean_abs_ce = 0.0;
  double mean_abs_kl = 0.0;

  static GateDiagnostics from_field(std::uint64_t step, std::string layer, const PurityField& field);
  std::string line() const;
};

}  // namespace rmt
