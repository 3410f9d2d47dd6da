#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rmt/masking.hpp"
#include "rmt/tape.hpp"
#include "rmt/tensor.hpp"

namespace rmt {

enum class LayerKind { attention, mlp, projection };
std::string_view to_string(LayerKind k);

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

// Pre-norm block: x + MHSA(LN1(x)), then + MLP(LN2(x)).
struct TransformerBlock {
  LayerNormParams ln1;
  MaskedLinear wq, wk, wv, wo;
  LayerNormParams ln2;
  MaskedLinear w1, w2;
};

struct ModelConfig {
  std::size_t input_width = 32;  // token width; the residual stream has the same width
  std::size_t embed_dim = 32;    // width of the joint feature space
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::size_t classes = 40;
  double tau = 0.07;
  std::uint64_t seed = 0;
  MaskSettings mask;
};

struct LayerRef {
  std::string name;
  LayerKind kind;
  MaskedLinear* layer;
};

struct ConstLayerRef {
  std::string name;
  LayerKind kind;
  const MaskedLinear* layer;
};

// Frozen class prototypes ("text" features, unit rows), a small transformer
// image encoder with maskable weight matrices, a masked projection head, and
// the temperature of the cosine classification head.
class DualEncoder {
 public:
  static DualEncoder random(const ModelConfig& config);
  // Inverse of named_parameters(). Masks start at `mask` settings, all disabled.
  static DualEncoder from_named(const std::vector<std::pair<std::string, Tensor>>& params, const MaskSettings& mask = {});

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  const Tensor& prototypes() const noexcept { return prototypes_; }
  double tau() const noexcept { return tau_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t heads() const noexcept { return heads_; }
  std::size_t classes() const { return prototypes_.rows(); }
  std::size_t embed_dim() const { return prototypes_.cols(); }
  const std::vector<TransformerBlock>& blocks() const noexcept { return blocks_; }
  const MaskedLinear& projection() const noexcept { return projection_; }

  // Maskable layers in canonical order: per block wq, wk, wv, wo, w1, w2; then projection.
  std::vector<LayerRef> layers();
  std::vector<ConstLayerRef> layers() const;

  // Resets every mask to its initial value and disables all layers.
  void reset_masks();
  // FNV-1a digest of every frozen value (weights, biases,
  // layer norms, prototypes, tau). Masks are excluded.
  std::uint64_t frozen_checksum() const;

 private:
  DualEncoder(Tensor prototypes, double tau, std::size_t width, std::size_t heads, std::vector<TransformerBlock> blocks,
              MaskedLinear projection);

  Tensor prototypes_;
  double tau_ = 0.07;
  std::size_t width_ = 0;
  std::size_t heads_ = 1;
  std::vector<TransformerBlock> blocks_;
  MaskedLinear projection_;
};

enum class ForwardMode {
  frozen,   // unmasked snapshot: theta everywhere, masks ignored
  masked,   // theta ⊙ M_bin for enabled layers, no gradient tracking
  tune,     // as masked, with theta ⊙ M_bin of enabled layers as tape parameters
  weights,  // every frozen value registered as a tape parameter (pretraining)
};

struct ForwardOptions {
  ForwardMode mode = ForwardMode::masked;
  // Subset of prototype rows to classify against; empty means all classes.
  std::span<const int> classes = {};
  // Treat each input row as a precomputed pooled feature: skip the blocks.
  bool bypass_blocks = false;
};

struct ForwardTrace {
  Var features;  // [B x embed_dim], unit rows
  Var logits;    // [B x C], cos / tau
  // Per canonical layer index; valid only for tracked layers in tune mode.
  std::vector<Var> masked_weights;
  // weights mode only, by checkpoint name.
  std::vector<std::pair<std::string, Var>> parameters;
};

// tokens: [B*seq_len x input_width].
ForwardTrace forward(Tape& tape, const DualEncoder& model, const Tensor& tokens, std::size_t seq_len,
                     const ForwardOptions& options = {});

// f = normalize(projection(mean_pool(blocks(tokens)))) for one sample [T x d_in].
Tensor encode_image(const DualEncoder& model, const Tensor& tokens);
// softmax over cos(g_i, f) / tau.
Tensor class_probabilities(const DualEncoder& model, const Tensor& f);
// Class probabilities of the unmasked model, detached from any tape. [B x C]
Tensor zero_shot_reference(const DualEncoder& model, const Tensor& tokens, std::size_t seq_len,
                           std::span<const int> classes = {}, bool bypass_blocks = false);

// RMTW checkpoint.
std::vector<std::uint8_t> encode_checkpoint(const DualEncoder& model);
DualEncoder decode_checkpoint(std::span<const std::uint8_t> bytes, const MaskSettings& mask = {});
void save_checkpoint(const DualEncoder& model, const std::string& path);
DualEncoder load_checkpoint(const std::string& path, const MaskSettings& mask = {});

// ---------------------------------------------------------------------------
// Surrogate pretraining.

// Labeled token sequences; sample i occupies rows [i*seq_len, (i+1)*seq_len).
struct LabeledTokens {
  Tensor tokens;
  std::vector<int> labels;
  std::size_t seq_len = 1;
  std::size_t size() const noexcept { return labels.size(); }
  // Gathers the given samples into one [B*seq_len x width] tensor.
  Tensor gather(std::span<const std::size_t> indices) const;
};

struct PretrainConfig {
  ModelConfig model;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr = 3e-3;
  double tau_floor = 0.01;
  std::uint64_t data_seed = 1;
};

struct PretrainReport {
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
  double tau = 0.0;
};

// Trains every encoder weight, bias, layer norm and tau (masks all-ones,
// prototypes fixed) with cross-entropy over the cosine head.
DualEncoder pretrain_surrogate(const LabeledTokens& data, const PretrainConfig& config, PretrainReport* report = nullptr);

// Percent of correctly classified samples.
double accuracy(const DualEncoder& model, const LabeledTokens& data, ForwardMode mode = ForwardMode::masked,
                std::span<const int> classes = {}, bool bypass_blocks = false);
std::vector<int> predict(const DualEncoder& model, const LabeledTokens& data, ForwardMode mode = ForwardMode::masked,
                         std::span<const int> classes = {}, bool bypass_blocks = false);

}  // namespace rmt
