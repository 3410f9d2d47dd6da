#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rmt/masking.hpp"
#include "rmt/model.hpp"
#include "rmt/optimizer.hpp"
#include "rmt/regularizer.hpp"

namespace rmt {

// ---------------------------------------------------------------------------
// Tasks

// n-shot classification task. Labels are local indices into class_ids, which
// name the prototype rows of the model the task classifies against.
struct FewShotTask {
  std::size_t shots = 0;
  std::vector<int> class_ids;
  LabeledTokens train;
  LabeledTokens test;
  // Optional base/new split, as local labels.
  std::vector<int> base_labels;
  std::vector<int> new_labels;
  // Rows are precomputed pooled features; the encoder blocks are bypassed.
  bool features = false;

  std::size_t classes() const noexcept { return class_ids.size(); }
  bool has_split() const noexcept { return !base_labels.empty() && !new_labels.empty(); }
};

// Keeps only the given local labels (in the given order) and relabels them
// 0..k-1. The split is dropped.
FewShotTask restrict_classes(const FewShotTask& task, std::span<const int> local_labels);

struct SyntheticConfig {
  std::uint64_t seed = 0;
  std::size_t base_classes = 40;
  std::size_t base_per_class = 48;
  std::size_t classes = 10;
  std::size_t shots = 16;
  std::size_t pool_per_class = 32;  // candidates the shots are drawn from
  std::size_t test_per_class = 50;
  std::size_t width = 32;
  std::size_t seq_len = 8;
  double sigma_pre = 0.35;
  // Downstream shift: a rotation of a random `rotation_dims`-dimensional
  // token subspace by `rotation_angle` radians, and extra noise of scale
  // sigma_shift on `nuisance_dims` fixed coordinates.
  std::size_t rotation_dims = 8;
  double rotation_angle = 1.5;
  std::size_t nuisance_dims = 8;
  double sigma_shift = 1.0;
  // Number of downstream classes marked as "base" for base-to-new runs;
  // 0 disables the split.
  std::size_t split_base = 5;
};

struct SyntheticData {
  LabeledTokens base;
  FewShotTask task;
};

SyntheticData generate_synthetic_task(const SyntheticConfig& config);

// RMTF files. A token task stores T*d values per sample; the loader needs T.
void write_rmtf(const std::string& path, const LabeledTokens& data, std::size_t class_count);
std::vector<std::uint8_t> encode_rmtf(const LabeledTokens& data, std::size_t class_count);
// Raw contents: one row per sample, values widened to double.
struct RmtfContents {
  Tensor rows;
  std::vector<int> labels;
  std::size_t class_count = 0;
};
RmtfContents decode_rmtf(std::span<const std::uint8_t> bytes);
// Token sequences of length seq_len; values are not modified.
LabeledTokens load_token_file(const std::string& path, std::size_t seq_len, std::size_t* class_count = nullptr);
// Precomputed features, L2-normalized per sample; classes = 0..C-1.
FewShotTask load_feature_task(const std::string& train_path, const std::string& test_path);

// ---------------------------------------------------------------------------
// Run configuration

enum class Policy { amt, mmt, pmt, dmt };
enum class OptimizerKind { sgd, adam };

std::string_view to_string(Policy p);
Policy parse_policy(std::string_view s);
std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);
std::string_view to_string(Schedule s);
Schedule parse_schedule(std::string_view s);

struct RunSeeds {
  std::uint64_t init = 0;
  std::uint64_t data = 0;
  std::uint64_t gate = 0;
  // All three streams derived from one run seed.
  static RunSeeds from(std::uint64_t run_seed);
};

struct RunConfig {
  Policy policy = Policy::amt;
  bool regularized = false;
  double leak = 0.3;
  MaskSettings mask;
  double lr = 8e-5;
  // Multiplier on lr; the base rate targets much wider models.
  double lr_scale = 5.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::adam;
  AdamConfig adam;
  Schedule schedule = Schedule::cosine;
  std::uint64_t seed = 0;
  RunSeeds seeds = RunSeeds::from(0);

  double effective_lr() const noexcept { return lr * lr_scale; }
  // Throws ConfigError on out-of-range values.
  void validate() const;
  // Canonical `key = value` lines, sorted by key.
  std::string to_text() const;
};

// Sets granularity, alpha and init on every layer; masks reset and disabled.
DualEncoder with_mask_settings(const DualEncoder& model, const MaskSettings& mask);

// ---------------------------------------------------------------------------
// Layer selection and delta analysis

// gamma * mean |g|: the per-step contribution to a layer's delta.
double delta_term(const Tensor& grad, double lr);

struct LayerDelta {
  std::string name;
  LayerKind kind;
  double delta = 0.0;         // sum of gamma * mean |dL/dM|
  double signed_delta = 0.0;  // sum of gamma * mean dL/dM
};

struct DeltaReport {
  std::vector<LayerDelta> layers;
  double attention_mean = 0.0;
  double mlp_mean = 0.0;
  double projection = 0.0;
  std::size_t steps = 0;

  std::string table() const;
};

// One epoch of CE mask gradients over every maskable layer, without updates.
DeltaReport delta_report(const DualEncoder& model, const FewShotTask& task, const RunConfig& config);

// Canonical indices of the layers a policy enables. DMT runs the warmup and
// throws DegenerateInputError when no layer qualifies. Feature tasks only
// reach the projection head, which is then the sole selected layer.
std::vector<std::size_t> select_layers(const DualEncoder& model, const FewShotTask& task, const RunConfig& config);

// ---------------------------------------------------------------------------
// Tuning

struct EpochRecord {
  std::size_t epoch = 0;
  double ce_loss = 0.0;
  double kl_loss = 0.0;
  double accuracy = 0.0;  // percent on the full test set
  double sparsity = 0.0;  // percent of zeros among enabled masks
};

struct EvalResult {
  double accuracy = 0.0;  // percent
  std::vector<double> per_class;
  std::optional<double> base_accuracy;
  std::optional<double> new_accuracy;
  std::optional<double> harmonic;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double zero_shot_accuracy = 0.0;
  EvalResult final_eval;
  double final_sparsity = 0.0;
  MaskArtifact artifact;
  std::vector<LayerDelta> deltas;  // accumulated over training, enabled layers
  std::vector<std::string> enabled_layers;
  bool projection_only = false;
  double wall_seconds = 0.0;
  std::string config_echo;

  // Line-oriented metrics: one record per epoch plus a summary record.
  // Timing is excluded so reruns are byte-identical.
  std::string metrics_text() const;
};

struct StepInfo {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double ce_loss = 0.0;
  double kl_loss = 0.0;
};

struct TuneHooks {
  // After each optimizer step and re-binarization.
  std::function<void(const StepInfo&, const DualEncoder&)> on_step;
  // Each purity field (regularized runs), keyed by canonical layer index.
  std::function<void(const StepInfo&, std::size_t layer, const PurityField&)> on_field;
  // Per-step gate diagnostics for every enabled layer (regularized runs).
  std::ostream* diagnostics = nullptr;
};

struct TuneResult {
  DualEncoder model;
  TrainReport report;
};

TuneResult run_mask_tuning(const DualEncoder& frozen, const FewShotTask& task, const RunConfig& config,
                           const TuneHooks& hooks = {});

// Builds an artifact from the enabled layers of a model.
MaskArtifact collect_artifact(const DualEncoder& model, std::string policy, std::uint64_t seed,
                              std::string config_hash = std::string(32, '0'));
// Enables and loads every layer named in the artifact; others are disabled.
DualEncoder apply_artifact(const DualEncoder& frozen, const MaskArtifact& artifact);

double harmonic_mean(double a, double b);

// Accuracy (percent) of the masked model on the test split; per-class and,
// when the task carries a split, base/new accuracies and their harmonic mean.
// Base and new accuracies classify among their own classes only.
EvalResult evaluate(const DualEncoder& model, const FewShotTask& task);

}  // namespace rmt
