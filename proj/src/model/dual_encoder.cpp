#include <array>
#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <random>

#include "rmt/errors.hpp"
#include "rmt/model.hpp"
#include "rmt/ops.hpp"

namespace rmt {
namespace {

Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor normalize_rows(Tensor t) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0.0;
    for (double v : t.row(i)) s += v * v;
    const double n = std::sqrt(s);
    if (!(n > 0.0)) throw DegenerateInputError("prototype row " + std::to_string(i) + " has zero norm");
    for (double& v : t.row(i)) v /= n;
  }
  return t;
}

MaskedLinear make_linear(std::size_t out, std::size_t in, std::mt19937_64& rng, const MaskSettings& mask) {
  return MaskedLinear(gaussian({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng), Tensor({out}, 0.0), mask);
}

LayerNormParams make_norm(std::size_t width) { return {Tensor({width}, 1.0), Tensor({width}, 0.0)}; }

constexpr const char* kBlockLayerNames[6] = {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.w1", "mlp.w2"};

template <typename Block>
auto block_layers(Block& b) {
  return std::array{&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2};
}

std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i) + "."; }

}  // namespace

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::attention: return "mhsa";
    case LayerKind::mlp: return "mlp";
    case LayerKind::projection: return "projection";
  }
  return "?";
}

DualEncoder::DualEncoder(Tensor prototypes, double tau, std::size_t width, std::size_t heads,
                         std::vector<TransformerBlock> blocks, MaskedLinear projection)
    : prototypes_(std::move(prototypes)),
      tau_(tau),
      width_(width),
      heads_(heads),
      blocks_(std::move(blocks)),
      projection_(std::move(projection)) {
  if (!(tau_ > 0.0)) throw ValidationError("temperature must be positive");
  if (heads_ == 0 || width_ % heads_ != 0) {
    throw DimensionError("head count " + std::to_string(heads_) + " does not divide width " + std::to_string(width_));
  }
  if (projection_.in_features() != width_ || projection_.out_features() != prototypes_.cols()) {
    throw DimensionError("projection shape does not connect width " + std::to_string(width_) + " to embedding " +
                         std::to_string(prototypes_.cols()));
  }
  for (std::size_t i = 0; i < prototypes_.rows(); ++i) {
    double s = 0.0;
    for (double v : prototypes_.row(i)) s += v * v;
    if (std::abs(std::sqrt(s) - 1.0) > 1e-9) throw ValidationError("prototype rows must have unit norm");
  }
}

DualEncoder DualEncoder::random(const ModelConfig& c) {
  if (c.input_width == 0 || c.embed_dim == 0 || c.classes == 0) throw ConfigError("model dimensions must be positive");
  std::mt19937_64 rng(c.seed);
  Tensor protos = normalize_rows(gaussian({c.classes, c.embed_dim}, 1.0, rng));
  std::vector<TransformerBlock> blocks;
  const std::size_t w = c.input_width, hidden = c.mlp_ratio * c.input_width;
  for (std::size_t i = 0; i < c.blocks; ++i) {
    blocks.push_back(TransformerBlock{
        make_norm(w),
        make_linear(w, w, rng, c.mask),
        make_linear(w, w, rng, c.mask),
        make_linear(w, w, rng, c.mask),
        make_linear(w, w, rng, c.mask),
        make_norm(w),
        make_linear(hidden, w, rng, c.mask),
        make_linear(w, hidden, rng, c.mask),
    });
  }
  MaskedLinear proj = make_linear(c.embed_dim, w, rng, c.mask);
  return DualEncoder(std::move(protos), c.tau, w, c.heads, std::move(blocks), std::move(proj));
}

std::vector<std::pair<std::string, Tensor>> DualEncoder::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("meta.heads", Tensor::scalar(static_cast<double>(heads_)));
  out.emplace_back("tau", Tensor::scalar(tau_));
  out.emplace_back("prototypes", prototypes_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const TransformerBlock& b = blocks_[i];
    const std::string p = block_prefix(i);
    out.emplace_back(p + "ln1.gamma", b.ln1.gamma);
    out.emplace_back(p + "ln1.beta", b.ln1.beta);
    out.emplace_back(p + "ln2.gamma", b.ln2.gamma);
    out.emplace_back(p + "ln2.beta", b.ln2.beta);
    const auto layers = block_layers(b);
    for (std::size_t j = 0; j < layers.size(); ++j) {
      out.emplace_back(p + kBlockLayerNames[j] + ".weight", layers[j]->weight());
      out.emplace_back(p + kBlockLayerNames[j] + ".bias", layers[j]->bias());
    }
  }
  out.emplace_back("projection.weight", projection_.weight());
  out.emplace_back("projection.bias", projection_.bias());
  return out;
}

DualEncoder DualEncoder::from_named(const std::vector<std::pair<std::string, Tensor>>& params, const MaskSettings& mask) {
  std::map<std::string, const Tensor*> by_name;
  std::size_t blocks = 0;
  for (const auto& [name, t] : params) {
    if (!by_name.emplace(name, &t).second) throw ValidationError("duplicate parameter '" + name + "'");
    if (name.rfind("blocks.", 0) == 0) {
      blocks = std::max<std::size_t>(blocks, std::stoul(name.substr(7, name.find('.', 7) - 7)) + 1);
    }
  }
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ValidationError("missing parameter '" + name + "'");
    return *it->second;
  };
  auto linear = [&](const std::string& name) { return MaskedLinear(get(name + ".weight"), get(name + ".bias"), mask); };
  const std::size_t heads = static_cast<std::size_t>(get("meta.heads")[0]);
  const Tensor& proj_w = get("projection.weight");
  std::vector<TransformerBlock> bs;
  for (std::size_t i = 0; i < blocks; ++i) {
    const std::string p = block_prefix(i);
    bs.push_back(TransformerBlock{
        {get(p + "ln1.gamma"), get(p + "ln1.beta")},
        linear(p + "attn.wq"),
        linear(p + "attn.wk"),
        linear(p + "attn.wv"),
        linear(p + "attn.wo"),
        {get(p + "ln2.gamma"), get(p + "ln2.beta")},
        linear(p + "mlp.w1"),
        linear(p + "mlp.w2"),
    });
  }
  return DualEncoder(get("prototypes"), get("tau")[0], proj_w.cols(), heads, std::move(bs), linear("projection"));
}

std::vector<LayerRef> DualEncoder::layers() {
  std::vector<LayerRef> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto ls = block_layers(blocks_[i]);
    for (std::size_t j = 0; j < ls.size(); ++j) {
      out.push_back({block_prefix(i) + kBlockLayerNames[j], j < 4 ? LayerKind::attention : LayerKind::mlp, ls[j]});
    }
  }
  out.push_back({"projection", LayerKind::projection, &projection_});
  return out;
}

std::vector<ConstLayerRef> DualEncoder::layers() const {
  std::vector<ConstLayerRef> out;
  for (const LayerRef& r : const_cast<DualEncoder*>(this)->layers()) out.push_back({r.name, r.kind, r.layer});
  return out;
}

void DualEncoder::reset_masks() {
  for (LayerRef& r : layers()) {
    r.layer->reset_mask();
    r.layer->set_enabled(false);
  }
}

std::uint64_t DualEncoder::frozen_checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, t] : named_parameters()) {
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    for (double v : t.data()) h = (h ^ std::bit_cast<std::uint64_t>(v)) * 1099511628211ull;
  }
  return h;
}

Tensor LabeledTokens::gather(std::span<const std::size_t> indices) const {
  const std::size_t width = tokens.cols();
  Tensor out({indices.size() * seq_len, width});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= labels.size()) throw IndexError("sample index out of range");
    std::copy_n(tokens.ptr() + indices[i] * seq_len * width, seq_len * width, out.ptr() + i * seq_len * width);
  }
  return out;
}

ForwardTrace forward(Tape& tape, const DualEncoder& model, const Tensor& tokens, std::size_t seq_len,
                     const ForwardOptions& opt) {
  if (tokens.rank() != 2 || tokens.cols() != model.width()) {
    throw DimensionError("tokens " + shape_string(tokens.shape()) + " do not match model width " +
                         std::to_string(model.width()));
  }
  if (tokens.rows() == 0) throw DimensionError("at least one token is required");
  if (opt.bypass_blocks && seq_len != 1) throw DimensionError("pooled features must use sequence length 1");

  ForwardTrace trace;
  const std::size_t n_layers = model.blocks().size() * 6 + 1;
  trace.masked_weights.assign(n_layers, Var{});

  auto param = [&](const std::string& name, const Tensor& t) {
    Var v = tape.parameter(t);
    trace.parameters.emplace_back(name, v);
    return v;
  };
  auto linear = [&](Var x, const MaskedLinear& layer, std::size_t index, const std::string& name) {
    switch (opt.mode) {
      case ForwardMode::frozen:
        return add_bias(tape, matmul_nt(tape, x, tape.constant(layer.weight())), tape.constant(layer.bias()));
      case ForwardMode::masked:
        return masked_linear(tape, x, layer, false).output;
      case ForwardMode::tune: {
        auto t = masked_linear(tape, x, layer, true);
        trace.masked_weights[index] = t.masked_weight;
        return t.output;
      }
      case ForwardMode::weights:
        break;
    }
    Var w = param(name + ".weight", layer.weight());
    Var b = param(name + ".bias", layer.bias());
    return add_bias(tape, matmul_nt(tape, x, w), b);
  };
  auto norm = [&](Var x, const LayerNormParams& p, const std::string& name) {
    if (opt.mode == ForwardMode::weights) {
      return layer_norm(tape, x, param(name + ".gamma", p.gamma), param(name + ".beta", p.beta));
    }
    return layer_norm(tape, x, tape.constant(p.gamma), tape.constant(p.beta));
  };

  Var x = tape.constant(tokens);
  Var pooled = x;
  if (!opt.bypass_blocks) {
    for (std::size_t i = 0; i < model.blocks().size(); ++i) {
      const TransformerBlock& b = model.blocks()[i];
      const std::string p = block_prefix(i);
      const std::size_t base = i * 6;
      Var h = norm(x, b.ln1, p + "ln1");
      Var q = linear(h, b.wq, base + 0, p + "attn.wq");
      Var k = linear(h, b.wk, base + 1, p + "attn.wk");
      Var v = linear(h, b.wv, base + 2, p + "attn.wv");
      Var a = attention(tape, q, k, v, model.heads(), seq_len);
      x = add(tape, x, linear(a, b.wo, base + 3, p + "attn.wo"));
      Var h2 = norm(x, b.ln2, p + "ln2");
      Var m = gelu(tape, linear(h2, b.w1, base + 4, p + "mlp.w1"));
      x = add(tape, x, linear(m, b.w2, base + 5, p + "mlp.w2"));
    }
    pooled = mean_pool(tape, x, seq_len);
  }
  trace.features = l2_normalize_rows(tape, linear(pooled, model.projection(), n_layers - 1, "projection"));

  Tensor protos = model.prototypes();
  if (!opt.classes.empty()) {
    const std::size_t d = model.embed_dim();
    protos = Tensor({opt.classes.size(), d});
    for (std::size_t c = 0; c < opt.classes.size(); ++c) {
      const int id = opt.classes[c];
      if (id < 0 || static_cast<std::size_t>(id) >= model.classes()) throw IndexError("class id " + std::to_string(id) + " out of range");
      std::copy_n(model.prototypes().ptr() + static_cast<std::size_t>(id) * d, d, protos.ptr() + c * d);
    }
  }
  Var sim = matmul_nt(tape, trace.features, tape.constant(std::move(protos)));
  Var tau = opt.mode == ForwardMode::weights ? param("tau", Tensor::scalar(model.tau())) : tape.constant(Tensor::scalar(model.tau()));
  trace.logits = divide_by_scalar(tape, sim, tau);
  return trace;
}

Tensor encode_image(const DualEncoder& model, const Tensor& tokens) {
  if (tokens.rank() != 2 || tokens.rows() == 0) throw DimensionError("encode_image expects a [T x d] token matrix with T >= 1");
  Tape tape;
  auto trace = forward(tape, model, tokens, tokens.rows());
  const Tensor& f = tape.value(trace.features);
  return f.reshaped({f.size()});
}

Tensor class_probabilities(const DualEncoder& model, const Tensor& f) {
  if (f.size() != model.embed_dim()) throw DimensionError("feature width does not match the prototypes");
  Tape tape;
  Var fn = l2_normalize_rows(tape, tape.constant(f.reshaped({1, f.size()})));
  Var sim = matmul_nt(tape, fn, tape.constant(model.prototypes()));
  Var logits = divide_by_scalar(tape, sim, tape.constant(Tensor::scalar(model.tau())));
  Tensor p = softmax_rows(tape.value(logits));
  return p.reshaped({p.size()});
}

Tensor zero_shot_reference(const DualEncoder& model, const Tensor& tokens, std::size_t seq_len,
                           std::span<const int> classes, bool bypass_blocks) {
  Tape tape;
  auto trace = forward(tape, model, tokens, seq_len, {ForwardMode::frozen, classes, bypass_blocks});
  return softmax_rows(tape.value(trace.logits));
}

std::vector<int> predict(const DualEncoder& model, const LabeledTokens& data, ForwardMode mode,
                         std::span<const int> classes, bool bypass_blocks) {
  constexpr std::size_t kChunk = 256;
  std::vector<int> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t end = std::min(data.size(), start + kChunk);
    idx.clear();
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    Tape tape;
    auto trace = forward(tape, model, data.gather(idx), data.seq_len, {mode, classes, bypass_blocks});
    const Tensor& L = tape.value(trace.logits);
    for (std::size_t r = 0; r < L.rows(); ++r) {
      auto row = L.row(r);
      out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

double accuracy(const DualEncoder& model, const LabeledTokens& data, ForwardMode mode, std::span<const int> classes,
                bool bypass_blocks) {
  if (data.size() == 0) throw ConfigError("accuracy of an empty set is undefined");
  const auto pred = predict(model, data, mode, classes, bypass_blocks);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace rmt
