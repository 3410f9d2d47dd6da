#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rmt/binary_io.hpp"
#include "rmt/errors.hpp"
#include "rmt/rng.hpp"
#include "rmt/training.hpp"

namespace rmt {
namespace {

constexpr char kMagic[] = "RMTF";
constexpr std::uint32_t kVersion = 1;

Tensor random_unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double n2 = 0.0;
    do {
      n2 = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        t(r, c) = normal(rng);
        n2 += t(r, c) * t(r, c);
      }
    } while (n2 == 0.0);
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t c = 0; c < cols; ++c) t(r, c) *= inv;
  }
  return t;
}

// Rotation acting on a random k-dimensional subspace: the basis is split
// into planes and each plane is turned by `angle`.
Tensor subspace_rotation(std::size_t width, std::size_t k, double angle, std::mt19937_64& rng) {
  Tensor rot({width, width});
  for (std::size_t i = 0; i < width; ++i) rot(i, i) = 1.0;
  if (k < 2 || angle == 0.0) return rot;

  // Gram-Schmidt on Gaussian vectors.
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> basis;
  while (basis.size() < k) {
    std::vector<double> v(width);
    for (double& x : v) x = normal(rng);
    for (const auto& b : basis) {
      const double d = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
      for (std::size_t i = 0; i < width; ++i) v[i] -= d * b[i];
    }
    const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (n < 1e-8) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  const double c = std::cos(angle) - 1.0;
  const double s = std::sin(angle);
  for (std::size_t p = 0; p + 1 < k; p += 2) {
    const auto& a = basis[p];
    const auto& b = basis[p + 1];
    for (std::size_t i = 0; i < width; ++i) {
      for (std::size_t j = 0; j < width; ++j) {
        rot(i, j) += c * (a[i] * a[j] + b[i] * b[j]) + s * (b[i] * a[j] - a[i] * b[j]);
      }
    }
  }
  return rot;
}

struct Sampler {
  const SyntheticConfig& cfg;
  const Tensor& protos;
  const Tensor* rotation;             // null for the unshifted base task
  std::vector<std::size_t> nuisance;  // coordinates with extra noise
  std::mt19937_64& rng;
  std::normal_distribution<double> normal{};

  // Appends one token sequence of class row `c`. Values are rounded to f32 so
  // that the RMTF round trip is exact.
  void draw(std::size_t c, std::vector<double>& out) {
    const std::size_t d = cfg.width;
    std::vector<double> clean(d);
    for (std::size_t j = 0; j < d; ++j) clean[j] = protos(c, j);
    if (rotation) {
      std::vector<double> r(d, 0.0);
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) r[i] += (*rotation)(i, j) * clean[j];
      }
      clean = std::move(r);
    }
    for (std::size_t t = 0; t < cfg.seq_len; ++t) {
      std::vector<double> x = clean;
      for (std::size_t j = 0; j < d; ++j) x[j] += cfg.sigma_pre * normal(rng);
      if (rotation) {
        for (std::size_t j : nuisance) x[j] += cfg.sigma_shift * normal(rng);
      }
      for (double v : x) out.push_back(static_cast<double>(static_cast<float>(v)));
    }
  }
};

LabeledTokens make_tokens(std::vector<double> values, std::vector<int> labels, std::size_t seq_len,
                          std::size_t width) {
  LabeledTokens out;
  out.seq_len = seq_len;
  out.tokens = Tensor({labels.size() * seq_len, width}, std::move(values));
  out.labels = std::move(labels);
  return out;
}

}  // namespace

SyntheticData generate_synthetic_task(const SyntheticConfig& cfg) {
  if (cfg.classes < 2) throw ConfigError("synthetic task needs at least 2 classes");
  if (cfg.shots < 1) throw ConfigError("synthetic task needs at least 1 shot");
  if (cfg.classes > cfg.base_classes) throw ConfigError("downstream classes must be a subset of the base classes");
  if (cfg.shots > cfg.pool_per_class) {
    throw ConfigError("requested " + std::to_string(cfg.shots) + " shots x " + std::to_string(cfg.classes) +
                      " classes exceeds the generated pool of " + std::to_string(cfg.pool_per_class) + " per class");
  }
  if (cfg.width == 0 || cfg.seq_len == 0) throw ConfigError("token width and sequence length must be positive");
  if (cfg.rotation_dims > cfg.width || cfg.nuisance_dims > cfg.width) {
    throw ConfigError("shift subspaces cannot exceed the token width");
  }
  if (cfg.split_base >= cfg.classes) throw ConfigError("split_base must leave at least one new class");
  if (cfg.test_per_class == 0 || cfg.base_per_class == 0) throw ConfigError("per-class sample counts must be positive");

  std::mt19937_64 rng(derive_seed(cfg.seed, "synthetic"));
  const Tensor protos = random_unit_rows(cfg.base_classes, cfg.width, rng);

  std::vector<int> order(cfg.base_classes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> class_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.classes));

  const Tensor rotation = subspace_rotation(cfg.width, cfg.rotation_dims, cfg.rotation_angle, rng);
  std::vector<std::size_t> coords(cfg.width);
  std::iota(coords.begin(), coords.end(), 0);
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(cfg.nuisance_dims);
  std::sort(coords.begin(), coords.end());

  SyntheticData out;
  {
    Sampler base{cfg, protos, nullptr, {}, rng};
    std::vector<double> values;
    std::vector<int> labels;
    for (std::size_t c = 0; c < cfg.base_classes; ++c) {
      for (std::size_t i = 0; i < cfg.base_per_class; ++i) {
        base.draw(c, values);
        labels.push_back(static_cast<int>(c));
      }
    }
    out.base = make_tokens(std::move(values), std::move(labels), cfg.seq_len, cfg.width);
  }

  Sampler shifted{cfg, protos, &rotation, coords, rng};
  std::vector<double> train_values, test_values;
  std::vector<int> train_labels, test_labels;
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    const auto c = static_cast<std::size_t>(class_ids[k]);
    std::vector<double> pool;
    for (std::size_t i = 0; i < cfg.pool_per_class; ++i) shifted.draw(c, pool);
    std::vector<std::size_t> pick(cfg.pool_per_class);
    std::iota(pick.begin(), pick.end(), 0);
    std::shuffle(pick.begin(), pick.end(), rng);
    const std::size_t stride = cfg.seq_len * cfg.width;
    for (std::size_t s = 0; s < cfg.shots; ++s) {
      train_values.insert(train_values.end(), pool.begin() + static_cast<std::ptrdiff_t>(pick[s] * stride),
                          pool.begin() + static_cast<std::ptrdiff_t>((pick[s] + 1) * stride));
      train_labels.push_back(static_cast<int>(k));
    }
    for (std::size_t i = 0; i < cfg.test_per_class; ++i) {
      shifted.draw(c, test_values);
      test_labels.push_back(static_cast<int>(k));
    }
  }

  FewShotTask& task = out.task;
  task.shots = cfg.shots;
  task.class_ids = std::move(class_ids);
  task.train = make_tokens(std::move(train_values), std::move(train_labels), cfg.seq_len, cfg.width);
  task.test = make_tokens(std::move(test_values), std::move(test_labels), cfg.seq_len, cfg.width);
  for (std::size_t k = 0; k < cfg.split_base; ++k) task.base_labels.push_back(static_cast<int>(k));
  if (cfg.split_base > 0) {
    for (std::size_t k = cfg.split_base; k < cfg.classes; ++k) task.new_labels.push_back(static_cast<int>(k));
  }
  return out;
}

FewShotTask restrict_classes(const FewShotTask& task, std::span<const int> local_labels) {
  if (local_labels.empty()) throw ConfigError("class restriction needs at least one class");
  std::vector<int> remap(task.classes(), -1);
  FewShotTask out;
  out.shots = task.shots;
  out.features = task.features;
  for (std::size_t i = 0; i < local_labels.size(); ++i) {
    const int l = local_labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= task.classes()) throw IndexError("class label out of range");
    if (remap[static_cast<std::size_t>(l)] != -1) throw ConfigError("duplicate class in restriction");
    remap[static_cast<std::size_t>(l)] = static_cast<int>(i);
    out.class_ids.push_back(task.class_ids[static_cast<std::size_t>(l)]);
  }
  auto filter = [&](const LabeledTokens& src) {
    std::vector<std::size_t> keep;
    std::vector<int> labels;
    for (std::size_t i = 0; i < src.size(); ++i) {
      const int m = remap[static_cast<std::size_t>(src.labels[i])];
      if (m >= 0) {
        keep.push_back(i);
        labels.push_back(m);
      }
    }
    LabeledTokens dst;
    dst.seq_len = src.seq_len;
    dst.tokens = keep.empty() ? Tensor({0, src.tokens.cols()}) : src.gather(keep);
    dst.labels = std::move(labels);
    return dst;
  };
  out.train = filter(task.train);
  out.test = filter(task.test);
  return out;
}

std::vector<std::uint8_t> encode_rmtf(const LabeledTokens& data, std::size_t class_count) {
  const std::size_t n = data.size();
  const std::size_t dim = n == 0 ? data.seq_len * data.tokens.cols() : data.tokens.size() / n;
  io::ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(n));
  w.u32(static_cast<std::uint32_t>(dim));
  w.u32(static_cast<std::uint32_t>(class_count));
  for (std::size_t i = 0; i < n; ++i) {
    if (data.labels[i] < 0 || static_cast<std::size_t>(data.labels[i]) >= class_count) {
      throw IndexError("label out of range for the declared class count");
    }
    w.u32(static_cast<std::uint32_t>(data.labels[i]));
    for (std::size_t j = 0; j < dim; ++j) w.f32(static_cast<float>(data.tokens.data()[i * dim + j]));
  }
  return w.take();
}

void write_rmtf(const std::string& path, const LabeledTokens& data, std::size_t class_count) {
  io::write_file(path, encode_rmtf(data, class_count));
}

RmtfContents decode_rmtf(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.raw(4, "magic") != kMagic) throw FormatError("not an RMTF file (bad magic)", 0);
  const std::uint64_t version_at = r.offset();
  if (r.u32("version") != kVersion) throw FormatError("unsupported RMTF version", version_at);
  const std::uint32_t n = r.u32("sample count");
  const std::uint64_t dim_at = r.offset();
  const std::uint32_t dim = r.u32("feature dim");
  if (dim == 0) throw FormatError("feature dim must be positive", dim_at);
  const std::uint64_t classes_at = r.offset();
  const std::uint32_t classes = r.u32("class count");
  if (classes == 0) throw FormatError("class count must be positive", classes_at);
  // Reject impossible sizes before allocating.
  if (r.remaining() / (4ull + 4ull * dim) < n) throw FormatError("truncated input: payload shorter than declared", r.offset());

  RmtfContents out;
  out.class_count = classes;
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n) * dim);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint64_t at = r.offset();
    const std::uint32_t label = r.u32("label");
    if (label >= classes) throw FormatError("label " + std::to_string(label) + " out of range", at);
    out.labels.push_back(static_cast<int>(label));
    for (std::uint32_t j = 0; j < dim; ++j) {
      const std::uint64_t vat = r.offset();
      const float v = r.f32("feature value");
      if (!std::isfinite(v)) throw FormatError("non-finite feature value", vat);
      values.push_back(static_cast<double>(v));
    }
  }
  if (!r.at_end()) r.fail("trailing bytes after the last sample");
  out.rows = Tensor({static_cast<std::size_t>(n), static_cast<std::size_t>(dim)}, std::move(values));
  return out;
}

LabeledTokens load_token_file(const std::string& path, std::size_t seq_len, std::size_t* class_count) {
  if (seq_len == 0) throw ConfigError("sequence length must be positive");
  RmtfContents c = decode_rmtf(io::read_file(path));
  const std::size_t dim = c.rows.cols();
  if (dim % seq_len != 0) {
    throw FormatError("feature dim " + std::to_string(dim) + " is not a multiple of sequence length " +
                          std::to_string(seq_len),
                      12);
  }
  if (class_count) *class_count = c.class_count;
  return make_tokens(std::vector<double>(c.rows.data().begin(), c.rows.data().end()), std::move(c.labels), seq_len,
                     dim / seq_len);
}

FewShotTask load_feature_task(const std::string& train_path, const std::string& test_path) {
  auto load = [](const std::string& path, std::size_t& classes) {
    RmtfContents c = decode_rmtf(io::read_file(path));
    for (std::size_t i = 0; i < c.rows.rows(); ++i) {
      auto row = c.rows.row(i);
      double n2 = 0.0;
      for (double v : row) n2 += v * v;
      if (n2 == 0.0) throw DegenerateInputError(path + ": sample " + std::to_string(i) + " has a zero feature vector");
      const double inv = 1.0 / std::sqrt(n2);
      for (double& v : row) v *= inv;
    }
    classes = c.class_count;
    return make_tokens(std::vector<double>(c.rows.data().begin(), c.rows.data().end()), std::move(c.labels), 1,
                       c.rows.cols());
  };
  std::size_t train_classes = 0, test_classes = 0;
  FewShotTask task;
  task.features = true;
  task.train = load(train_path, train_classes);
  task.test = load(test_path, test_classes);
  if (train_classes != test_classes) throw ValidationError("train and test files declare different class counts");
  if (task.train.tokens.cols() != task.test.tokens.cols()) {
    throw ValidationError("train and test files have different feature dims");
  }
  task.class_ids.resize(train_classes);
  std::iota(task.class_ids.begin(), task.class_ids.end(), 0);
  std::vector<std::size_t> per_class(train_classes, 0);
  for (int l : task.train.labels) ++per_class[static_cast<std::size_t>(l)];
  task.shots = per_class.empty() ? 0 : *std::min_element(per_class.begin(), per_class.end());
  return task;
}

}  // namespace rmt
