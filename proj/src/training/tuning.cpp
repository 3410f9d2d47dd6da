#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "rmt/config.hpp"
#include "rmt/errors.hpp"
#include "rmt/kernels.hpp"
#include "rmt/ops.hpp"
#include "rmt/rng.hpp"
#include "rmt/training.hpp"

namespace rmt {

std::string_view to_string(Policy p) {
  switch (p) {
    case Policy::amt: return "amt";
    case Policy::mmt: return "mmt";
    case Policy::pmt: return "pmt";
    case Policy::dmt: return "dmt";
  }
  return "?";
}

Policy parse_policy(std::string_view s) {
  if (s == "amt") return Policy::amt;
  if (s == "mmt") return Policy::mmt;
  if (s == "pmt") return Policy::pmt;
  if (s == "dmt") return Policy::dmt;
  throw ConfigError("unknown policy '" + std::string(s) + "' (expected amt, mmt, pmt or dmt)");
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected sgd or adam)");
}

std::string_view to_string(Schedule s) { return s == Schedule::constant ? "constant" : "cosine"; }

Schedule parse_schedule(std::string_view s) {
  if (s == "constant") return Schedule::constant;
  if (s == "cosine") return Schedule::cosine;
  throw ConfigError("unknown schedule '" + std::string(s) + "' (expected constant or cosine)");
}

RunSeeds RunSeeds::from(std::uint64_t run_seed) {
  return {derive_seed(run_seed, "init"), derive_seed(run_seed, "data"), derive_seed(run_seed, "gate")};
}

void RunConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!std::isfinite(lr) || !std::isfinite(lr_scale) || effective_lr() < 0.0) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  validate_leak(leak);
  if (!std::isfinite(mask.alpha) || !std::isfinite(mask.init)) throw ConfigError("mask alpha and init must be finite");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("adam eps must be positive");
}

std::string RunConfig::to_text() const {
  std::vector<std::pair<std::string, std::string>> kv = {
      {"mask.alpha", format_number(mask.alpha)},
      {"mask.granularity", std::string(rmt::to_string(mask.granularity))},
      {"mask.init", format_number(mask.init)},
      {"run.adam.beta1", format_number(adam.beta1)},
      {"run.adam.beta2", format_number(adam.beta2)},
      {"run.adam.eps", format_number(adam.eps)},
      {"run.batch_size", std::to_string(batch_size)},
      {"run.epochs", std::to_string(epochs)},
      {"run.leak", format_number(leak)},
      {"run.lr", format_number(lr)},
      {"run.lr_scale", format_number(lr_scale)},
      {"run.optimizer", std::string(rmt::to_string(optimizer))},
      {"run.policy", std::string(rmt::to_string(policy))},
      {"run.regularized", regularized ? "true" : "false"},
      {"run.schedule", std::string(rmt::to_string(schedule))},
      {"run.seed", std::to_string(seed)},
      {"run.seeds.data", std::to_string(seeds.data)},
      {"run.seeds.gate", std::to_string(seeds.gate)},
      {"run.seeds.init", std::to_string(seeds.init)},
  };
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

namespace {

// The hash identifies the effective run: a regularizer with zero leak is the
// plain update, and the leak of an unregularized run is irrelevant.
std::string effective_text(RunConfig c) {
  if (!c.regularized || c.leak == 0.0) {
    c.regularized = false;
    c.leak = 0.0;
  }
  return c.to_text();
}

std::string policy_label(const RunConfig& c) {
  const bool reg = c.regularized && c.leak > 0.0;
  return (reg ? "r-" : "") + std::string(to_string(c.policy));
}

std::vector<const MaskedLinear*> enabled_layers(const DualEncoder& model) {
  std::vector<const MaskedLinear*> out;
  for (const auto& l : model.layers()) {
    if (l.layer->enabled()) out.push_back(l.layer);
  }
  return out;
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
  const std::size_t c = t.cols();
  Tensor out({idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(t.ptr() + idx[i] * c, c, out.ptr() + i * c);
  return out;
}

}  // namespace

DualEncoder with_mask_settings(const DualEncoder& model, const MaskSettings& mask) {
  return DualEncoder::from_named(model.named_parameters(), mask);
}

MaskArtifact collect_artifact(const DualEncoder& model, std::string policy, std::uint64_t seed,
                              std::string config_hash) {
  MaskArtifact a;
  a.policy = std::move(policy);
  a.seed = seed;
  a.config_hash = std::move(config_hash);
  for (const auto& l : model.layers()) {
    if (!l.layer->enabled()) continue;
    a.layers.push_back(MaskRecord::from_binary(l.name, l.layer->binary_mask(), l.layer->alpha(), l.layer->granularity()));
  }
  return a;
}

DualEncoder apply_artifact(const DualEncoder& frozen, const MaskArtifact& artifact) {
  MaskSettings s;
  if (!artifact.layers.empty()) {
    s.alpha = artifact.layers.front().alpha;
    s.granularity = artifact.layers.front().granularity;
  }
  for (const auto& r : artifact.layers) {
    if (r.alpha != s.alpha || r.granularity != s.granularity) {
      throw IncompatibleArtifactError("artifact mixes thresholds or granularities across layers");
    }
  }
  if (!(s.init > s.alpha)) s.init = s.alpha > 0.0 ? 2.0 * s.alpha : 1.0;
  DualEncoder model = with_mask_settings(frozen, s);
  auto layers = model.layers();
  for (const auto& r : artifact.layers) {
    auto it = std::find_if(layers.begin(), layers.end(), [&](const LayerRef& l) { return l.name == r.name; });
    if (it == layers.end()) throw IncompatibleArtifactError("artifact layer '" + r.name + "' does not exist in the model");
    if (it->layer->weight().shape() != r.shape) {
      throw IncompatibleArtifactError("artifact layer '" + r.name + "' has shape " + shape_string(r.shape) +
                                      ", model has " + shape_string(it->layer->weight().shape()));
    }
    it->layer->set_enabled(true);
    it->layer->load_binary_mask(r.to_tensor());
  }
  return model;
}

double harmonic_mean(double a, double b) {
  if (a <= 0.0 || b <= 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

EvalResult evaluate(const DualEncoder& model, const FewShotTask& task) {
  if (task.test.size() == 0) throw ConfigError("cannot evaluate on an empty test set");
  const bool bypass = task.features;
  EvalResult r;
  const auto pred = predict(model, task.test, ForwardMode::masked, task.class_ids, bypass);
  std::vector<std::size_t> hit(task.classes(), 0), total(task.classes(), 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto l = static_cast<std::size_t>(task.test.labels[i]);
    ++total[l];
    if (pred[i] == task.test.labels[i]) {
      ++hit[l];
      ++correct;
    }
  }
  r.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
  for (std::size_t c = 0; c < task.classes(); ++c) {
    r.per_class.push_back(total[c] ? 100.0 * static_cast<double>(hit[c]) / static_cast<double>(total[c]) : 0.0);
  }
  if (task.has_split()) {
    const FewShotTask base = restrict_classes(task, task.base_labels);
    const FewShotTask fresh = restrict_classes(task, task.new_labels);
    r.base_accuracy = accuracy(model, base.test, ForwardMode::masked, base.class_ids, bypass);
    r.new_accuracy = accuracy(model, fresh.test, ForwardMode::masked, fresh.class_ids, bypass);
    r.harmonic = harmonic_mean(*r.base_accuracy, *r.new_accuracy);
  }
  return r;
}

std::string TrainReport::metrics_text() const {
  std::string out;
  for (const auto& e : epochs) {
    out += "epoch=" + std::to_string(e.epoch) + " ce_loss=" + format_number(e.ce_loss) +
           " kl_loss=" + format_number(e.kl_loss) + " accuracy=" + format_number(e.accuracy) +
           " sparsity=" + format_number(e.sparsity) + "\n";
  }
  out += "summary zero_shot=" + format_number(zero_shot_accuracy) + " accuracy=" + format_number(final_eval.accuracy) +
         " sparsity=" + format_number(final_sparsity) + " enabled_layers=" + std::to_string(enabled_layers.size()) +
         " masked_bits=" + std::to_string(artifact.total_bits()) + " zero_bits=" + std::to_string(artifact.total_zeros());
  if (final_eval.harmonic) {
    out += " base=" + format_number(*final_eval.base_accuracy) + " new=" + format_number(*final_eval.new_accuracy) +
           " harmonic=" + format_number(*final_eval.harmonic);
  }
  if (projection_only) out += " scope=projection_head";
  out += "\n";
  return out;
}

TuneResult run_mask_tuning(const DualEncoder& frozen, const FewShotTask& task, const RunConfig& config,
                           const TuneHooks& hooks) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  if (task.train.size() == 0) throw ConfigError("mask tuning needs at least one training sample");
  if (task.test.size() == 0) throw ConfigError("mask tuning needs a non-empty test set");

  DualEncoder model = with_mask_settings(frozen, config.mask);
  const std::vector<std::size_t> selected = select_layers(model, task, config);
  if (selected.empty()) throw ConfigError("no layer is enabled for mask tuning");
  auto layers = model.layers();
  for (std::size_t i : selected) layers[i].layer->set_enabled(true);

  const std::uint64_t frozen_sum = model.frozen_checksum();
  const bool bypass = task.features;
  const std::span<const int> classes = task.class_ids;
  const std::size_t seq_len = task.train.seq_len;
  const std::size_t n = task.train.size();

  TrainReport report;
  report.config_echo = config.to_text();
  report.projection_only = bypass;
  for (std::size_t i : selected) report.enabled_layers.push_back(layers[i].name);
  report.zero_shot_accuracy = accuracy(model, task.test, ForwardMode::frozen, classes, bypass);

  // General knowledge: the frozen model's class probabilities, computed once.
  const Tensor reference = zero_shot_reference(model, task.train.tokens, seq_len, classes, bypass);

  std::vector<AdamState> adam;
  std::vector<std::uint64_t> offsets;
  std::uint64_t offset = 0;
  for (std::size_t i : selected) {
    adam.emplace_back(layers[i].layer->weight().size(), config.adam);
    offsets.push_back(offset);
    offset += layers[i].layer->weight().size();
    report.deltas.push_back({layers[i].name, layers[i].kind, 0.0, 0.0});
  }

  const GateStream gate(config.seeds.gate);
  std::mt19937_64 data_rng(config.seeds.data);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min(config.batch_size, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::uint64_t total_steps = config.epochs * steps_per_epoch;
  const bool regularized = config.regularized;
  const bool use_kl_grad = regularized;
  const auto& kern = kernels::active();

  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), data_rng);
    double ce_sum = 0.0, kl_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(task.train.labels[i]);
      const Tensor ref = gather_rows(reference, idx);

      Tape tape;
      auto trace = forward(tape, model, task.train.gather(idx), seq_len, {ForwardMode::tune, classes, bypass});
      Var ce = softmax_cross_entropy(tape, trace.logits, labels);
      StepInfo info{step, epoch, tape.value(ce)[0], kl_divergence(ref, tape.value(trace.logits))};
      if (!std::isfinite(info.ce_loss) || !std::isfinite(info.kl_loss)) {
        throw TrainingError("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + ")");
      }
      ce_sum += info.ce_loss * static_cast<double>(idx.size());
      kl_sum += info.kl_loss * static_cast<double>(idx.size());

      tape.backward(ce);
      std::vector<Tensor> g_ce;
      for (std::size_t i : selected) {
        const Var w = trace.masked_weights[i];
        g_ce.push_back(w.valid() ? ste_gradient(*layers[i].layer, tape.grad(w)) : Tensor(layers[i].layer->weight().shape()));
      }
      std::vector<Tensor> g_kl;
      if (use_kl_grad) {
        Var kl = kl_divergence(tape, ref, trace.logits);
        tape.backward(kl);
        for (std::size_t i : selected) {
          const Var w = trace.masked_weights[i];
          g_kl.push_back(w.valid() ? ste_gradient(*layers[i].layer, tape.grad(w)) : Tensor(layers[i].layer->weight().shape()));
        }
      }

      const double lr = scheduled_lr(config.schedule, config.effective_lr(), step, total_steps);
      for (std::size_t k = 0; k < selected.size(); ++k) {
        MaskedLinear& layer = *layers[selected[k]].layer;
        report.deltas[k].delta += delta_term(g_ce[k], lr);
        Tensor final_grad = g_ce[k];
        if (regularized) {
          const PurityField field = purity_field(g_ce[k], g_kl[k], config.leak, gate, step, offsets[k]);
          final_grad = field.final_gradient();
          if (hooks.on_field) hooks.on_field(info, selected[k], field);
          if (hooks.diagnostics) {
            *hooks.diagnostics << GateDiagnostics::from_field(step, layers[selected[k]].name, field).line() << '\n';
          }
        }
        if (config.optimizer == OptimizerKind::adam) {
          adam[k].step(layer.mask_weights_mut(), final_grad.data(), lr);
        } else {
          kern.axpy(-lr, final_grad.ptr(), layer.mask_weights_mut().data(), final_grad.size());
        }
        layer.rebinarize();
      }
      if (hooks.on_step) hooks.on_step(info, model);
      ++step;
    }

    const auto active = enabled_layers(model);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.ce_loss = ce_sum / static_cast<double>(n);
    rec.kl_loss = kl_sum / static_cast<double>(n);
    rec.accuracy = accuracy(model, task.test, ForwardMode::masked, classes, bypass);
    rec.sparsity = sparsity(active);
    report.epochs.push_back(rec);
  }

  if (model.frozen_checksum() != frozen_sum) throw StateError("frozen parameters changed during mask tuning");

  report.final_eval = evaluate(model, task);
  report.artifact = collect_artifact(model, policy_label(config), config.seed, md5_hex(effective_text(config)));
  report.final_sparsity = sparsity(report.artifact);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(model), std::move(report)};
}

}  // namespace rmt
