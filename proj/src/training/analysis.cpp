#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "rmt/errors.hpp"
#include "rmt/ops.hpp"
#include "rmt/training.hpp"

namespace rmt {

double delta_term(const Tensor& grad, double lr) {
  if (grad.empty()) return 0.0;
  double s = 0.0;
  for (double v : grad.data()) s += std::abs(v);
  return lr * s / static_cast<double>(grad.size());
}

DeltaReport delta_report(const DualEncoder& frozen, const FewShotTask& task, const RunConfig& config) {
  config.validate();
  const std::size_t n = task.train.size();
  if (n == 0) throw ConfigError("delta analysis needs at least one training sample");

  DualEncoder model = with_mask_settings(frozen, config.mask);
  auto layers = model.layers();
  for (auto& l : layers) l.layer->set_enabled(true);

  DeltaReport report;
  for (const auto& l : layers) report.layers.push_back({l.name, l.kind, 0.0, 0.0});

  std::mt19937_64 rng(config.seeds.data);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t batch = std::min(config.batch_size, n);
  const double lr = config.effective_lr();

  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    std::span<const std::size_t> idx(order.data() + start, end - start);
    std::vector<int> labels;
    for (std::size_t i : idx) labels.push_back(task.train.labels[i]);
    Tape tape;
    auto trace = forward(tape, model, task.train.gather(idx), task.train.seq_len,
                         {ForwardMode::tune, task.class_ids, task.features});
    Var ce = softmax_cross_entropy(tape, trace.logits, labels);
    tape.backward(ce);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (!trace.masked_weights[i].valid()) continue;
      const Tensor g = ste_gradient(*layers[i].layer, tape.grad(trace.masked_weights[i]));
      report.layers[i].delta += delta_term(g, lr);
      double s = 0.0;
      for (double v : g.data()) s += v;
      report.layers[i].signed_delta += lr * s / static_cast<double>(g.size());
    }
    ++report.steps;
  }

  double att = 0.0, mlp = 0.0;
  std::size_t n_att = 0, n_mlp = 0;
  for (const auto& l : report.layers) {
    if (l.kind == LayerKind::attention) {
      att += l.delta;
      ++n_att;
    } else if (l.kind == LayerKind::mlp) {
      mlp += l.delta;
      ++n_mlp;
    } else {
      report.projection = l.delta;
    }
  }
  report.attention_mean = n_att ? att / static_cast<double>(n_att) : 0.0;
  report.mlp_mean = n_mlp ? mlp / static_cast<double>(n_mlp) : 0.0;
  return report;
}

std::string DeltaReport::table() const {
  std::size_t w = 5;
  for (const auto& l : layers) w = std::max(w, l.name.size());
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-*s  %-10s  %14s  %14s\n", static_cast<int>(w), "layer", "type", "delta",
                "signed_delta");
  out += buf;
  for (const auto& l : layers) {
    std::snprintf(buf, sizeof(buf), "%-*s  %-10s  %14.6e  %14.6e\n", static_cast<int>(w), l.name.c_str(),
                  std::string(to_string(l.kind)).c_str(), l.delta, l.signed_delta);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "mean mhsa %.6e\nmean mlp %.6e\nprojection %.6e\n", attention_mean, mlp_mean,
                projection);
  out += buf;
  return out;
}

std::vector<std::size_t> select_layers(const DualEncoder& model, const FewShotTask& task, const RunConfig& config) {
  const auto layers = model.layers();
  std::vector<std::size_t> out;
  if (task.features) {
    out.push_back(layers.size() - 1);
    return out;
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerKind k = layers[i].kind;
    switch (config.policy) {
      case Policy::amt:
        if (k == LayerKind::attention) out.push_back(i);
        break;
      case Policy::mmt:
        if (k == LayerKind::mlp) out.push_back(i);
        break;
      case Policy::pmt:
        out.push_back(i);
        break;
      case Policy::dmt:
        break;
    }
  }
  if (config.policy == Policy::dmt) {
    const DeltaReport warm = delta_report(model, task, config);
    for (std::size_t i = 0; i < warm.layers.size(); ++i) {
      if (warm.layers[i].signed_delta > 0.0) out.push_back(i);
    }
    if (out.empty()) throw DegenerateInputError("dynamic layer selection found no layer with a positive mean gradient");
  }
  return out;
}

}  // namespace rmt
