#include <algorithm>
#include <cmath>

#include "rmt/errors.hpp"
#include "rmt/kernels.hpp"
#include "rmt/masking.hpp"
#include "rmt/ops.hpp"

namespace rmt {

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::parameter: return "parameter";
    case Granularity::input_channel: return "input-channel";
    case Granularity::output_channel: return "output-channel";
  }
  return "?";
}

Granularity parse_granularity(std::string_view s) {
  if (s == "parameter") return Granularity::parameter;
  if (s == "input-channel" || s == "input_channel") return Granularity::input_channel;
  if (s == "output-channel" || s == "output_channel") return Granularity::output_channel;
  throw ConfigError("unknown granularity '" + std::string(s) + "'");
}

Tensor binarize(const Tensor& m, double alpha, Granularity granularity) {
  Tensor out(m.shape());
  if (granularity == Granularity::parameter) {
    kernels::active().threshold(m.ptr(), alpha, out.ptr(), m.size());
    return out;
  }
  const std::size_t rows = m.rows(), cols = m.cols();
  if (granularity == Granularity::output_channel) {
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += m(i, j);
      const double keep = s / static_cast<double>(cols) > alpha ? 1.0 : 0.0;
      for (std::size_t j = 0; j < cols; ++j) out(i, j) = keep;
    }
    return out;
  }
  std::vector<double> col_sum(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) col_sum[j] += m(i, j);
  for (std::size_t j = 0; j < cols; ++j) {
    const double keep = col_sum[j] / static_cast<double>(rows) > alpha ? 1.0 : 0.0;
    for (std::size_t i = 0; i < rows; ++i) out(i, j) = keep;
  }
  return out;
}

MaskedLinear::MaskedLinear(Tensor weight, Tensor bias, MaskSettings settings)
    : weight_(std::move(weight)), bias_(std::move(bias)), settings_(settings) {
  if (weight_.rank() != 2) throw DimensionError("masked layer weight must be a matrix, got " + shape_string(weight_.shape()));
  if (bias_.size() != weight_.rows()) {
    throw DimensionError("bias of " + std::to_string(bias_.size()) + " elements for " + std::to_string(weight_.rows()) +
                         " outputs");
  }
  if (!std::isfinite(settings_.alpha)) throw ConfigError("mask threshold must be finite");
  reset_mask();
}

void MaskedLinear::rebinarize() { binary_ = binarize(mask_, settings_.alpha, settings_.granularity); }

void MaskedLinear::set_mask_weights(Tensor m) {
  if (m.shape() != weight_.shape()) throw DimensionError("mask shape " + shape_string(m.shape()) + " vs weight " + shape_string(weight_.shape()));
  mask_ = std::move(m);
  rebinarize();
}

void MaskedLinear::reset_mask() {
  mask_ = Tensor(weight_.shape(), settings_.init);
  rebinarize();
}

void MaskedLinear::load_binary_mask(const Tensor& bits) {
  if (bits.size() != weight_.size()) throw DimensionError("binary mask size does not match layer");
  Tensor m(weight_.shape());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = bits[i] > 0.5 ? settings_.init : 0.0;
  set_mask_weights(std::move(m));
}

Tensor MaskedLinear::masked_weight() const {
  if (!enabled_) return weight_;
  Tensor w(weight_.shape());
  kernels::active().hadamard(weight_.ptr(), binary_.ptr(), w.ptr(), w.size());
  return w;
}

Tensor apply_mask(const MaskedLinear& layer, const Tensor& x) {
  const bool vec = x.rank() == 1;
  const Tensor X = vec ? x.reshaped({1, x.size()}) : x;
  Tape tape;
  auto trace = masked_linear(tape, tape.constant(X), layer, false);
  Tensor y = tape.value(trace.output);
  return vec ? y.reshaped({y.size()}) : y;
}

MaskedLinearTrace masked_linear(Tape& tape, Var x, const MaskedLinear& layer, bool track_mask) {
  MaskedLinearTrace trace;
  Var w;
  if (layer.enabled() && track_mask) {
    w = tape.parameter(layer.masked_weight());
    trace.masked_weight = w;
  } else {
    w = tape.constant(layer.masked_weight());
  }
  trace.output = add_bias(tape, matmul_nt(tape, x, w), tape.constant(layer.bias()));
  return trace;
}

Tensor ste_gradient(const MaskedLinear& layer, const Tensor& grad_masked) {
  if (grad_masked.empty()) throw StateError("straight-through gradient requested before backward");
  const Tensor& theta = layer.weight();
  if (grad_masked.shape() != theta.shape()) {
    throw DimensionError("gradient shape " + shape_string(grad_masked.shape()) + " vs weight " + shape_string(theta.shape()));
  }
  Tensor g(theta.shape());
  kernels::active().hadamard(theta.ptr(), grad_masked.ptr(), g.ptr(), g.size());
  const std::size_t rows = theta.rows(), cols = theta.cols();
  if (layer.granularity() == Granularity::output_channel) {
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += g(i, j);
      for (std::size_t j = 0; j < cols; ++j) g(i, j) = s;
    }
  } else if (layer.granularity() == Granularity::input_channel) {
    std::vector<double> s(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) s[j] += g(i, j);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) g(i, j) = s[j];
  }
  return g;
}

double sparsity(std::span<const MaskedLinear* const> layers) {
  std::uint64_t total = 0, zeros = 0;
  for (const MaskedLinear* l : layers) {
    if (!l->enabled()) continue;
    total += l->binary_mask().size();
    for (double b : l->binary_mask().data()) zeros += b == 0.0;
  }
  if (total == 0) throw DegenerateInputError("sparsity is undefined with no enabled masked layers");
  return 100.0 * static_cast<double>(zeros) / static_cast<double>(total);
}

}  // namespace rmt
