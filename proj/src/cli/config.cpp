#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "rmt/config.hpp"
#include "rmt/errors.hpp"

namespace rmt {
namespace {

enum class Kind { uint, real, boolean, text };

struct KeySpec {
  const char* key;
  Kind kind;
  const char* fallback;
  // Optional extra check on the raw text.
  std::function<void(std::string_view)> check = nullptr;
};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_uint(std::string_view s, std::uint64_t& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_real(std::string_view s, double& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(out);
}

bool parse_bool(std::string_view s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return out = true, true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return out = false, true;
  return false;
}

// "auto" or an unsigned integer.
void seed_or_auto(std::string_view s) {
  std::uint64_t v;
  if (s != "auto" && !parse_uint(s, v)) throw ConfigError("expected an unsigned integer or 'auto'");
}

const std::vector<KeySpec>& registry() {
  static const std::vector<KeySpec> specs = {
      {"gen.seed", Kind::uint, "0"},
      {"gen.base_classes", Kind::uint, "40"},
      {"gen.base_per_class", Kind::uint, "48"},
      {"gen.classes", Kind::uint, "10"},
      {"gen.shots", Kind::uint, "16"},
      {"gen.pool_per_class", Kind::uint, "32"},
      {"gen.test_per_class", Kind::uint, "50"},
      {"gen.width", Kind::uint, "32"},
      {"gen.seq_len", Kind::uint, "8"},
      {"gen.sigma_pre", Kind::real, "0.35"},
      {"gen.rotation_dims", Kind::uint, "8"},
      {"gen.rotation_angle", Kind::real, "1.5"},
      {"gen.nuisance_dims", Kind::uint, "8"},
      {"gen.sigma_shift", Kind::real, "1"},
      {"gen.split_base", Kind::uint, "5"},
      {"model.embed_dim", Kind::uint, "32"},
      {"model.blocks", Kind::uint, "2"},
      {"model.heads", Kind::uint, "4"},
      {"model.mlp_ratio", Kind::uint, "2"},
      {"model.tau", Kind::real, "0.07"},
      {"model.seed", Kind::uint, "0"},
      {"pretrain.epochs", Kind::uint, "20"},
      {"pretrain.batch_size", Kind::uint, "64"},
      {"pretrain.lr", Kind::real, "0.003"},
      {"pretrain.tau_floor", Kind::real, "0.01"},
      {"pretrain.seed", Kind::uint, "1"},
      {"run.policy", Kind::text, "amt", [](std::string_view s) { parse_policy(s); }},
      {"run.regularized", Kind::boolean, "false"},
      {"run.leak", Kind::real, "0.3"},
      {"run.lr", Kind::real, "8e-05"},
      {"run.lr_scale", Kind::real, "5"},
      {"run.epochs", Kind::uint, "30"},
      {"run.batch_size", Kind::uint, "32"},
      {"run.optimizer", Kind::text, "adam", [](std::string_view s) { parse_optimizer(s); }},
      {"run.adam.beta1", Kind::real, "0.9"},
      {"run.adam.beta2", Kind::real, "0.999"},
      {"run.adam.eps", Kind::real, "1e-08"},
      {"run.schedule", Kind::text, "cosine", [](std::string_view s) { parse_schedule(s); }},
      {"run.seed", Kind::uint, "0"},
      {"run.seeds.init", Kind::text, "auto", seed_or_auto},
      {"run.seeds.data", Kind::text, "auto", seed_or_auto},
      {"run.seeds.gate", Kind::text, "auto", seed_or_auto},
      {"mask.init", Kind::real, "0.01"},
      {"mask.alpha", Kind::real, "0.005"},
      {"mask.granularity", Kind::text, "parameter", [](std::string_view s) { parse_granularity(s); }},
  };
  return specs;
}

const KeySpec* find_spec(std::string_view key) {
  for (const auto& s : registry()) {
    if (key == s.key) return &s;
  }
  return nullptr;
}

// Canonical text for a validated value, so equal configs print identically.
std::string normalize(const KeySpec& spec, std::string_view raw) {
  const std::string where = std::string(spec.key) + " = '" + std::string(raw) + "'";
  switch (spec.kind) {
    case Kind::uint: {
      std::uint64_t v;
      if (!parse_uint(raw, v)) throw ConfigError(where + ": expected an unsigned integer");
      return std::to_string(v);
    }
    case Kind::real: {
      double v;
      if (!parse_real(raw, v)) throw ConfigError(where + ": expected a finite number");
      return format_number(v);
    }
    case Kind::boolean: {
      bool v;
      if (!parse_bool(raw, v)) throw ConfigError(where + ": expected true or false");
      return v ? "true" : "false";
    }
    case Kind::text:
      if (spec.check) {
        try {
          spec.check(raw);
        } catch (const ConfigError& e) {
          throw ConfigError(where + ": " + e.what());
        }
      }
      return std::string(raw);
  }
  return std::string(raw);
}

std::uint64_t seed_value(const Config& c, std::string_view key, std::uint64_t derived) {
  const std::string& v = c.get(key);
  return v == "auto" ? derived : std::stoull(v);
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

Config::Config() {
  for (const auto& s : registry()) values_.emplace(s.key, s.fallback);
}

std::vector<std::string> Config::known_keys() {
  std::vector<std::string> keys;
  for (const auto& s : registry()) keys.emplace_back(s.key);
  return keys;
}

void Config::set(std::string_view key, std::string_view value) {
  const KeySpec* spec = find_spec(trim(key));
  if (!spec) throw ConfigError("unknown config key '" + std::string(trim(key)) + "'");
  values_[spec->key] = normalize(*spec, trim(value));
}

void Config::set_assignment(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

const std::string& Config::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

double Config::number(std::string_view key) const {
  double v;
  if (!parse_real(get(key), v)) throw ConfigError(std::string(key) + " is not a number");
  return v;
}

std::uint64_t Config::integer(std::string_view key) const {
  std::uint64_t v;
  if (!parse_uint(get(key), v)) throw ConfigError(std::string(key) + " is not an unsigned integer");
  return v;
}

bool Config::flag(std::string_view key) const {
  bool v;
  if (!parse_bool(get(key), v)) throw ConfigError(std::string(key) + " is not a boolean");
  return v;
}

void Config::merge_text(std::string_view text, std::string_view origin) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path);
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

SyntheticConfig synthetic_config(const Config& c) {
  SyntheticConfig s;
  s.seed = c.integer("gen.seed");
  s.base_classes = c.integer("gen.base_classes");
  s.base_per_class = c.integer("gen.base_per_class");
  s.classes = c.integer("gen.classes");
  s.shots = c.integer("gen.shots");
  s.pool_per_class = c.integer("gen.pool_per_class");
  s.test_per_class = c.integer("gen.test_per_class");
  s.width = c.integer("gen.width");
  s.seq_len = c.integer("gen.seq_len");
  s.sigma_pre = c.number("gen.sigma_pre");
  s.rotation_dims = c.integer("gen.rotation_dims");
  s.rotation_angle = c.number("gen.rotation_angle");
  s.nuisance_dims = c.integer("gen.nuisance_dims");
  s.sigma_shift = c.number("gen.sigma_shift");
  s.split_base = c.integer("gen.split_base");
  return s;
}

ModelConfig model_config(const Config& c) {
  ModelConfig m;
  m.input_width = c.integer("gen.width");
  m.embed_dim = c.integer("model.embed_dim");
  m.blocks = c.integer("model.blocks");
  m.heads = c.integer("model.heads");
  m.mlp_ratio = c.integer("model.mlp_ratio");
  m.classes = c.integer("gen.base_classes");
  m.tau = c.number("model.tau");
  m.seed = c.integer("model.seed");
  return m;
}

PretrainConfig pretrain_config(const Config& c) {
  PretrainConfig p;
  p.model = model_config(c);
  p.epochs = c.integer("pretrain.epochs");
  p.batch_size = c.integer("pretrain.batch_size");
  p.lr = c.number("pretrain.lr");
  p.tau_floor = c.number("pretrain.tau_floor");
  p.data_seed = c.integer("pretrain.seed");
  return p;
}

RunConfig run_config(const Config& c) {
  RunConfig r;
  r.policy = parse_policy(c.get("run.policy"));
  r.regularized = c.flag("run.regularized");
  r.leak = c.number("run.leak");
  r.lr = c.number("run.lr");
  r.lr_scale = c.number("run.lr_scale");
  r.epochs = c.integer("run.epochs");
  r.batch_size = c.integer("run.batch_size");
  r.optimizer = parse_optimizer(c.get("run.optimizer"));
  r.adam.beta1 = c.number("run.adam.beta1");
  r.adam.beta2 = c.number("run.adam.beta2");
  r.adam.eps = c.number("run.adam.eps");
  r.schedule = parse_schedule(c.get("run.schedule"));
  r.seed = c.integer("run.seed");
  const RunSeeds derived = RunSeeds::from(r.seed);
  r.seeds.init = seed_value(c, "run.seeds.init", derived.init);
  r.seeds.data = seed_value(c, "run.seeds.data", derived.data);
  r.seeds.gate = seed_value(c, "run.seeds.gate", derived.gate);
  r.mask.init = c.number("mask.init");
  r.mask.alpha = c.number("mask.alpha");
  r.mask.granularity = parse_granularity(c.get("mask.granularity"));
  r.validate();
  return r;
}

std::string md5_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_md5(), nullptr) != 1 || len != 16) {
    throw Error("MD5 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

}  // namespace rmt
