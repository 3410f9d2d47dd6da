#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rmt/errors.hpp"
#include "rmt/model.hpp"
#include "rmt/ops.hpp"
#include "rmt/optimizer.hpp"

namespace rmt {

DualEncoder pretrain_surrogate(const LabeledTokens& data, const PretrainConfig& config, PretrainReport* report) {
  if (data.size() == 0) throw ConfigError("pretraining needs a non-empty base task");
  if (config.epochs == 0 || config.batch_size == 0 || !(config.lr > 0.0)) {
    throw ConfigError("pretraining needs epochs >= 1, batch size >= 1 and a positive learning rate");
  }
  ModelConfig mc = config.model;
  mc.input_width = data.tokens.cols();
  DualEncoder model = DualEncoder::random(mc);

  auto params = model.named_parameters();
  std::vector<AdamState> adam;
  for (const auto& [name, t] : params) adam.emplace_back(t.size());

  std::mt19937_64 rng(config.data_seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min(config.batch_size, data.size());
  const std::size_t steps_per_epoch = (data.size() + batch - 1) / batch;
  const std::uint64_t total_steps = config.epochs * steps_per_epoch;
  std::uint64_t step = 0;

  PretrainReport local;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(data.labels[i]);

      Tape tape;
      auto trace = forward(tape, model, data.gather(idx), data.seq_len, {ForwardMode::weights});
      Var loss = softmax_cross_entropy(tape, trace.logits, labels);
      const double l = tape.value(loss)[0];
      if (!std::isfinite(l)) throw TrainingError("pretraining diverged (non-finite loss) in epoch " + std::to_string(epoch));
      loss_sum += l * static_cast<double>(idx.size());
      tape.backward(loss);

      const double lr = scheduled_lr(Schedule::cosine, config.lr, step++, total_steps);
      for (const auto& [name, var] : trace.parameters) {
        auto it = std::find_if(params.begin(), params.end(), [&](const auto& p) { return p.first == name; });
        const std::size_t k = static_cast<std::size_t>(it - params.begin());
        adam[k].step(it->second.data(), tape.grad(var).data(), lr);
      }
      auto tau = std::find_if(params.begin(), params.end(), [](const auto& p) { return p.first == "tau"; });
      tau->second[0] = std::max(tau->second[0], config.tau_floor);
      model = DualEncoder::from_named(params, mc.mask);
    }
    local.epoch_loss.push_back(loss_sum / static_cast<double>(data.size()));
  }
  local.train_accuracy = accuracy(model, data);
  local.tau = model.tau();
  if (report) *report = std::move(local);
  return model;
}

}  // namespace rmt
