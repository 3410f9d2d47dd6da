#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rmt/tape.hpp"
#include "rmt/tensor.hpp"

namespace rmt {

// Unit over which one binary decision is made.
enum class Granularity : std::uint8_t {
  parameter = 0,       // every weight independently
  input_channel = 1,   // whole column j, decided by the column mean of M
  output_channel = 2,  // whole row i, decided by the row mean of M
};

std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view s);

struct MaskSettings {
  double init = 1e-2;
  double alpha = 5e-3;
  Granularity granularity = Granularity::parameter;
};

// M_bin = 1 where the (group-reduced) mask weight is strictly greater than alpha.
Tensor binarize(const Tensor& mask_weights, double alpha, Granularity granularity = Granularity::parameter);

// Frozen fully connected layer y = (theta ⊙ M_bin) x + b with a learnable
// real-valued mask M. The bias is never masked; theta and b are immutable.
class MaskedLinear {
 public:
  MaskedLinear(Tensor weight, Tensor bias, MaskSettings settings = {});

  const Tensor& weight() const noexcept { return weight_; }
  const Tensor& bias() const noexcept { return bias_; }
  const Tensor& mask_weights() const noexcept { return mask_; }
  const Tensor& binary_mask() const noexcept { return binary_; }
  double alpha() const noexcept { return settings_.alpha; }
  Granularity granularity() const noexcept { return settings_.granularity; }
  const MaskSettings& settings() const noexcept { return settings_; }
  std::size_t out_features() const { return weight_.rows(); }
  std::size_t in_features() const { return weight_.cols(); }

  bool enabled() const noexcept { return enabled_; }
  void set_enabled(bool on) noexcept { enabled_ = on; }

  // In-place access for optimizers. Call rebinarize() after modifying.
  std::span<double> mask_weights_mut() noexcept { return mask_.data(); }
  void rebinarize();
  void set_mask_weights(Tensor m);
  void reset_mask();
  // Replaces M_bin directly, e.g. when restoring from an artifact. M is set to
  // init where the bit is 1 and to 0 where it is 0 so that rebinarize() agrees.
  void load_binary_mask(const Tensor& bits);

  // theta ⊙ M_bin when enabled, theta otherwise.
  Tensor masked_weight() const;

 private:
  Tensor weight_;
  Tensor bias_;
  MaskSettings settings_;
  Tensor mask_;
  Tensor binary_;
  bool enabled_ = false;
};

// (theta ⊙ M_bin) x + b for x of shape [n x in] or [in].
Tensor apply_mask(const MaskedLinear& layer, const Tensor& x);

struct MaskedLinearTrace {
  Var output;
  // Registered leaf for theta ⊙ M_bin; invalid when the mask is not tracked.
  Var masked_weight;
};

// Records the layer on the tape. With track_mask set and the layer enabled,
// theta ⊙ M_bin becomes a parameter whose gradient feeds ste_gradient.
MaskedLinearTrace masked_linear(Tape& tape, Var x, const MaskedLinear& layer, bool track_mask);

// Straight-through gradient with respect to M: theta ⊙ dL/d(theta ⊙ M_bin).
// For channel granularities the per-element values are summed over each group
// and broadcast back. Throws StateError when no gradient is supplied yet.
Tensor ste_gradient(const MaskedLinear& layer, const Tensor& grad_wrt_masked_weight);

// Percentage of zeros among the binary masks of enabled layers.
double sparsity(std::span<const MaskedLinear* const> layers);

// ---------------------------------------------------------------------------
// Mask artifact (RMTM) with bit-packed payloads.

struct MaskRecord {
  std::string name;
  Granularity granularity = Granularity::parameter;
  double alpha = 0.0;
  Shape shape;
  std::uint64_t bit_count = 0;
  std::vector<std::uint8_t> payload;  // ceil(bit_count / 8) bytes, MSB-first

  static MaskRecord from_binary(std::string name, const Tensor& bits, double alpha, Granularity g);
  bool bit(std::uint64_t i) const;
  std::uint64_t zero_count() const;
  Tensor to_tensor() const;
};

struct MaskArtifact {
  std::vector<MaskRecord> layers;
  std::string policy;
  std::uint64_t seed = 0;
  std::string config_hash = std::string(32, '0');  // 32 lowercase hex chars

  std::uint64_t total_bits() const;
  std::uint64_t total_zeros() const;
};

// Row-major bit stream, most significant bit first, zero-padded final byte.
std::vector<std::uint8_t> pack_bits(std::span<const double> binary);
std::vector<double> unpack_bits(std::span<const std::uint8_t> payload, std::uint64_t bit_count);

std::vector<std::uint8_t> pack_masks(const MaskArtifact& artifact);
MaskArtifact unpack_masks(std::span<const std::uint8_t> bytes);

void save_mask_artifact(const MaskArtifact& artifact, const std::string& path);
MaskArtifact load_mask_artifact(const std::string& path);

// Human-readable form used by the CLI pack/unpack commands.
std::string mask_artifact_to_text(const MaskArtifact& artifact);
MaskArtifact mask_artifact_from_text(std::string_view text);

double sparsity(const MaskArtifact& artifact);
// IoU of the zero-position sets across all layers; 1 when both are empty.
double mask_iou(const MaskArtifact& a, const MaskArtifact& b);

}  // namespace rmt
