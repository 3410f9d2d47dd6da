#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rmt/model.hpp"
#include "rmt/training.hpp"

namespace rmt {

// Line-oriented `key = value` configuration over a fixed set of dotted keys.
// Every known key always has a value (its default until overridden); unknown
// keys and malformed values raise ConfigError.
class Config {
 public:
  Config();

  static std::vector<std::string> known_keys();

  void set(std::string_view key, std::string_view value);
  // "key=value" as given on the command line.
  void set_assignment(std::string_view assignment);
  const std::string& get(std::string_view key) const;

  double number(std::string_view key) const;
  std::uint64_t integer(std::string_view key) const;
  bool flag(std::string_view key) const;

  // Blank lines and lines starting with '#' are skipped. `origin` prefixes
  // error messages (e.g. the file name).
  void merge_text(std::string_view text, std::string_view origin = "config");
  void load_file(const std::string& path);

  // Every key, sorted, one `key = value` per line.
  std::string to_text() const;

  bool operator==(const Config&) const = default;

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

SyntheticConfig synthetic_config(const Config& c);
ModelConfig model_config(const Config& c);
PretrainConfig pretrain_config(const Config& c);
RunConfig run_config(const Config& c);

// Shortest decimal form that round-trips the double.
std::string format_number(double v);

// 32 lowercase hex characters.
std::string md5_hex(std::string_view data);

}  // namespace rmt
