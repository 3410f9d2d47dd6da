#pragma once

// Little-endian byte stream helpers shared by the RMTW/RMTM/RMTF formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rmt/errors.hpp"

namespace rmt::io {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  // u16 length prefix + UTF-8 payload.
  void str16(std::string_view s) {
    if (s.size() > 0xFFFF) throw ValidationError("string too long for a u16 length prefix");
    u16(static_cast<std::uint16_t>(s.size()));
    raw(s);
  }

  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint64_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }

  std::uint8_t u8(std::string_view what) { return static_cast<std::uint8_t>(get(1, what)); }
  std::uint16_t u16(std::string_view what) { return static_cast<std::uint16_t>(get(2, what)); }
  std::uint32_t u32(std::string_view what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::uint64_t u64(std::string_view what) { return get(8, what); }
  double f64(std::string_view what) { return std::bit_cast<double>(get(8, what)); }
  float f32(std::string_view what) { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4, what))); }

  std::span<const std::uint8_t> bytes(std::size_t n, std::string_view what) {
    need(n, what);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n, std::string_view what) {
    auto b = bytes(n, what);
    return std::string(b.begin(), b.end());
  }
  std::string str16(std::string_view what) {
    const std::uint16_t n = u16(what);
    return raw(n, what);
  }

  [[noreturn]] void fail(const std::string& message) const { throw FormatError(message, pos_); }

 private:
  void need(std::size_t n, std::string_view what) const {
    if (remaining() < n) throw FormatError("truncated input while reading " + std::string(what), pos_);
  }
  std::uint64_t get(int n, std::string_view what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace rmt::io
