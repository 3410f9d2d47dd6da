#include <cmath>
#include <cstdio>

#include "rmt/errors.hpp"
#include "rmt/kernels.hpp"
#include "rmt/ops.hpp"
#include "rmt/regularizer.hpp"
#include "rmt/rng.hpp"

namespace rmt {
namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

double mean_of(const Tensor& t, bool absolute) {
  if (t.empty()) return 0.0;
  double s = 0.0;
  for (double v : t.data()) s += absolute ? std::abs(v) : v;
  return s / static_cast<double>(t.size());
}

}  // namespace

double purity(double g_ce, double g_kl) {
  double out;
  kernels::scalar().purity(&g_ce, &g_kl, &out, 1);
  return out;
}

double purity_compact(double g_ce, double g_kl) {
  const double denom = std::abs(g_ce) + std::abs(g_kl);
  if (denom == 0.0) return 0.5;
  const double sgn = g_ce > 0.0 ? 1.0 : (g_ce < 0.0 ? -1.0 : 0.0);
  return 0.5 * (1.0 + sgn * (g_ce + g_kl) / denom);
}

Tensor purity(const Tensor& g_ce, const Tensor& g_kl) {
  require_same(g_ce, g_kl, "purity");
  Tensor p(g_ce.shape());
  kernels::active().purity(g_ce.ptr(), g_kl.ptr(), p.ptr(), p.size());
  return p;
}

void validate_leak(double leak) {
  if (!(leak >= 0.0 && leak <= 1.0)) throw ConfigError("leak parameter must lie in [0, 1], got " + std::to_string(leak));
}

Tensor GateStream::uniforms(std::uint64_t step, std::uint64_t offset, const Shape& shape) const {
  Tensor u(shape);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = counter_uniform(seed_, step, offset + i);
  return u;
}

Tensor sample_gate(const Tensor& p, const Tensor& u) {
  require_same(p, u, "sample_gate");
  Tensor gate(p.shape());
  // A leak of 1 maps "keep" to 1 and "drop" to 0, i.e. the indicator itself.
  kernels::active().gate_scale(p.ptr(), u.ptr(), 1.0, gate.ptr(), gate.size());
  return gate;
}

Tensor sample_gate(const Tensor& p, const GateStream& stream, std::uint64_t step, std::uint64_t offset) {
  return sample_gate(p, stream.uniforms(step, offset, p.shape()));
}

Tensor leaky_scale(const Tensor& gate, double leak) {
  validate_leak(leak);
  Tensor s(gate.shape());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = gate[i] != 0.0 ? 1.0 : 1.0 - leak;
  return s;
}

Tensor dropout_factor(const Tensor& gate, double leak) {
  validate_leak(leak);
  Tensor s(gate.shape());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = 1.0 - leak * (1.0 - gate[i]);
  return s;
}

Tensor PurityField::final_gradient() const {
  Tensor g(g_ce.shape());
  kernels::active().hadamard(scale.ptr(), g_ce.ptr(), g.ptr(), g.size());
  return g;
}

PurityField purity_field(const Tensor& g_ce, const Tensor& g_kl, double leak, const GateStream& stream,
                         std::uint64_t step, std::uint64_t offset) {
  validate_leak(leak);
  PurityField f;
  f.g_ce = g_ce;
  f.g_kl = g_kl;
  f.purity = purity(g_ce, g_kl);
  f.uniform = stream.uniforms(step, offset, g_ce.shape());
  f.gate = sample_gate(f.purity, f.uniform);
  f.scale = Tensor(g_ce.shape());
  kernels::active().gate_scale(f.purity.ptr(), f.uniform.ptr(), leak, f.scale.ptr(), f.scale.size());
  return f;
}

Tensor regularized_step(const Tensor& mask, const Tensor& g_ce, const Tensor& g_kl, double leak, double lr,
                        const GateStream& stream, std::uint64_t step, std::uint64_t offset) {
  require_same(mask, g_ce, "regularized_step");
  const PurityField f = purity_field(g_ce, g_kl, leak, stream, step, offset);
  Tensor out = mask;
  const Tensor g = f.final_gradient();
  kernels::active().axpy(-lr, g.ptr(), out.ptr(), out.size());
  return out;
}

std::vector<Tensor> kl_gradient_field(const DualEncoder& model, const Tensor& tokens, std::size_t seq_len,
                                      const Tensor* reference, std::span<const int> classes, bool bypass_blocks) {
  if (!reference || reference->empty()) throw StateError("KL gradient requested without a cached zero-shot reference");
  Tape tape;
  auto trace = forward(tape, model, tokens, seq_len, {ForwardMode::tune, classes, bypass_blocks});
  Var loss = kl_divergence(tape, *reference, trace.logits);
  tape.backward(loss);
  const auto layers = model.layers();
  std::vector<Tensor> out(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (trace.masked_weights[i].valid()) out[i] = ste_gradient(*layers[i].layer, tape.grad(trace.masked_weights[i]));
  }
  return out;
}

GateDiagnostics GateDiagnostics::from_field(std::uint64_t step, std::string layer, const PurityField& f) {
  GateDiagnostics d;
  d.step = step;
  d.layer = std::move(layer);
  d.mean_purity = mean_of(f.purity, false);
  d.gate_rate = mean_of(f.gate, false);
  d.mean_abs_ce = mean_of(f.g_ce, true);
  d.mean_abs_kl = mean_of(f.g_kl, true);
  return d;
}

std::string GateDiagnostics::line() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "step=%llu layer=%s mean_purity=%.6f gate_rate=%.6f mean_abs_ce=%.6e mean_abs_kl=%.6e",
                static_cast<unsigned long long>(step), layer.c_str(), mean_purity, gate_rate, mean_abs_ce, mean_abs_kl);
  return buf;
}

}  // namespace rmt
