#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <sstream>

#include "rmt/binary_io.hpp"
#include "rmt/errors.hpp"
#include "rmt/masking.hpp"

namespace rmt {
namespace {

constexpr char kMagic[4] = {'R', 'M', 'T', 'M'};
constexpr std::uint32_t kVersion = 1;

bool is_hex(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::vector<std::uint8_t> pack_bits(std::span<const double> binary) {
  std::vector<std::uint8_t> out((binary.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < binary.size(); ++i) {
    if (binary[i] != 0.0) out[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
  }
  return out;
}

std::vector<double> unpack_bits(std::span<const std::uint8_t> payload, std::uint64_t bit_count) {
  if (payload.size() * 8 < bit_count) throw ValidationError("payload shorter than declared bit count");
  std::vector<double> out(bit_count);
  for (std::uint64_t i = 0; i < bit_count; ++i) out[i] = (payload[i / 8] >> (7 - i % 8)) & 1u ? 1.0 : 0.0;
  return out;
}

MaskRecord MaskRecord::from_binary(std::string name, const Tensor& bits, double alpha, Granularity g) {
  MaskRecord r;
  r.name = std::move(name);
  r.granularity = g;
  r.alpha = alpha;
  r.shape = bits.shape();
  r.bit_count = bits.size();
  r.payload = pack_bits(bits.data());
  return r;
}

bool MaskRecord::bit(std::uint64_t i) const { return (payload[i / 8] >> (7 - i % 8)) & 1u; }

std::uint64_t MaskRecord::zero_count() const {
  std::uint64_t ones = 0;
  for (std::uint8_t b : payload) ones += static_cast<std::uint64_t>(std::popcount(b));
  return bit_count - ones;
}

Tensor MaskRecord::to_tensor() const { return Tensor(shape, unpack_bits(payload, bit_count)); }

std::uint64_t MaskArtifact::total_bits() const {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.bit_count;
  return n;
}

std::uint64_t MaskArtifact::total_zeros() const {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.zero_count();
  return n;
}

std::vector<std::uint8_t> pack_masks(const MaskArtifact& artifact) {
  if (artifact.config_hash.size() != 32 || !is_hex(artifact.config_hash)) {
    throw ValidationError("config hash must be 32 lowercase hex characters");
  }
  io::ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(artifact.layers.size()));
  for (const MaskRecord& r : artifact.layers) {
    if (r.payload.size() != (r.bit_count + 7) / 8 || r.bit_count != shape_size(r.shape)) {
      throw ValidationError("mask record '" + r.name + "' payload does not match its shape");
    }
    w.str16(r.name);
    w.u8(static_cast<std::uint8_t>(r.granularity));
    w.f64(r.alpha);
    w.u8(static_cast<std::uint8_t>(r.shape.size()));
    for (std::size_t d : r.shape) w.u64(d);
    w.u64(r.bit_count);
    w.bytes(r.payload);
  }
  w.str16(artifact.policy);
  w.u64(artifact.seed);
  w.raw(artifact.config_hash);
  return w.take();
}

MaskArtifact unpack_masks(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.raw(4, "magic") != std::string_view(kMagic, 4)) throw FormatError("not a mask artifact (bad magic)", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) throw FormatError("unsupported mask artifact version " + std::to_string(version), 4);
  const std::uint32_t count = r.u32("layer count");
  MaskArtifact a;
  a.layers.reserve(std::min<std::uint32_t>(count, 4096));
  for (std::uint32_t i = 0; i < count; ++i) {
    MaskRecord rec;
    const std::string where = "layer " + std::to_string(i);
    rec.name = r.str16(where + " name");
    const std::string ctx = "layer '" + rec.name + "'";
    const std::uint8_t g = r.u8(ctx + " granularity");
    if (g > 2) r.fail(ctx + ": unknown granularity code " + std::to_string(g));
    rec.granularity = static_cast<Granularity>(g);
    rec.alpha = r.f64(ctx + " alpha");
    const std::uint8_t ndim = r.u8(ctx + " ndim");
    for (std::uint8_t d = 0; d < ndim; ++d) rec.shape.push_back(r.u64(ctx + " dims"));
    rec.bit_count = r.u64(ctx + " bit count");
    if (rec.bit_count != shape_size(rec.shape)) r.fail(ctx + ": bit count disagrees with shape " + shape_string(rec.shape));
    const std::uint64_t nbytes = (rec.bit_count + 7) / 8;
    if (nbytes > r.remaining()) r.fail("truncated payload for " + ctx);
    auto payload = r.bytes(nbytes, ctx + " payload");
    rec.payload.assign(payload.begin(), payload.end());
    if (rec.bit_count % 8 != 0) {
      const std::uint8_t pad_mask = static_cast<std::uint8_t>(0xFFu >> (rec.bit_count % 8));
      if (rec.payload.back() & pad_mask) r.fail(ctx + ": nonzero padding bits");
    }
    a.layers.push_back(std::move(rec));
  }
  a.policy = r.str16("metadata policy");
  a.seed = r.u64("metadata seed");
  a.config_hash = r.raw(32, "metadata config hash");
  if (!is_hex(a.config_hash)) r.fail("config hash is not lowercase hex");
  if (!r.at_end()) r.fail("trailing bytes after metadata");
  return a;
}

void save_mask_artifact(const MaskArtifact& artifact, const std::string& path) {
  io::write_file(path, pack_masks(artifact));
}

MaskArtifact load_mask_artifact(const std::string& path) { return unpack_masks(io::read_file(path)); }

std::string mask_artifact_to_text(const MaskArtifact& a) {
  std::ostringstream out;
  out << "# rmt mask artifact v1\n";
  out << "policy = " << a.policy << "\n";
  out << "seed = " << a.seed << "\n";
  out << "config_hash = " << a.config_hash << "\n";
  for (const MaskRecord& r : a.layers) {
    out << "layer " << r.name << " granularity=" << to_string(r.granularity) << " alpha=" << format_double(r.alpha)
        << " shape=";
    for (std::size_t d = 0; d < r.shape.size(); ++d) out << (d ? "x" : "") << r.shape[d];
    out << "\n";
    const std::size_t width = r.shape.empty() ? 0 : r.shape.back();
    for (std::uint64_t i = 0; i < r.bit_count; ++i) {
      out << (r.bit(i) ? '1' : '0');
      if (width && (i + 1) % width == 0) out << '\n';
    }
    if (!width || r.bit_count % width) out << '\n';
  }
  return out.str();
}

MaskArtifact mask_artifact_from_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  auto bad = [&](const std::string& msg) -> ValidationError {
    return ValidationError("mask text line " + std::to_string(lineno) + ": " + msg);
  };
  auto header_value = [&](const std::string& key) {
    if (!std::getline(in, line)) throw bad("missing " + key);
    ++lineno;
    const std::string prefix = key + " = ";
    if (line.rfind(prefix, 0) != 0) throw bad("expected '" + prefix + "'");
    return line.substr(prefix.size());
  };
  if (!std::getline(in, line) || line != "# rmt mask artifact v1") throw bad("missing header");
  ++lineno;
  MaskArtifact a;
  a.policy = header_value("policy");
  a.seed = std::stoull(header_value("seed"));
  a.config_hash = header_value("config_hash");
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string tag, name, gran, alpha, shape;
    fields >> tag >> name >> gran >> alpha >> shape;
    if (tag != "layer" || gran.rfind("granularity=", 0) || alpha.rfind("alpha=", 0) || shape.rfind("shape=", 0)) {
      throw bad("malformed layer header");
    }
    std::vector<double> bits;
    Shape dims;
    std::string dim_list = shape.substr(6);
    std::size_t pos = 0;
    while (pos <= dim_list.size()) {
      const std::size_t x = dim_list.find('x', pos);
      dims.push_back(std::stoull(dim_list.substr(pos, x - pos)));
      if (x == std::string::npos) break;
      pos = x + 1;
    }
    const std::size_t n = shape_size(dims);
    while (bits.size() < n) {
      if (!std::getline(in, line)) throw bad("layer '" + name + "' has too few bits");
      ++lineno;
      for (char c : line) {
        if (c != '0' && c != '1') throw bad("unexpected character in bit row");
        bits.push_back(c == '1' ? 1.0 : 0.0);
      }
    }
    if (bits.size() != n) throw bad("layer '" + name + "' has too many bits");
    a.layers.push_back(MaskRecord::from_binary(name, Tensor(dims, std::move(bits)), std::stod(alpha.substr(6)),
                                               parse_granularity(gran.substr(12))));
  }
  return a;
}

double sparsity(const MaskArtifact& artifact) {
  const std::uint64_t total = artifact.total_bits();
  if (total == 0) throw DegenerateInputError("sparsity is undefined for an artifact without masked layers");
  return 100.0 * static_cast<double>(artifact.total_zeros()) / static_cast<double>(total);
}

double mask_iou(const MaskArtifact& a, const MaskArtifact& b) {
  if (a.layers.size() != b.layers.size()) throw IncompatibleArtifactError("artifacts have different layer counts");
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const MaskRecord& x = a.layers[i];
    const MaskRecord& y = b.layers[i];
    if (x.name != y.name || x.shape != y.shape) {
      throw IncompatibleArtifactError("layer " + std::to_string(i) + " differs: '" + x.name + "' " + shape_string(x.shape) +
                                      " vs '" + y.name + "' " + shape_string(y.shape));
    }
    for (std::size_t k = 0; k < x.payload.size(); ++k) {
      // Zero positions are the complement; padding bits are zero in both, so mask them out.
      std::uint8_t valid = 0xFF;
      if (k + 1 == x.payload.size() && x.bit_count % 8) valid = static_cast<std::uint8_t>(0xFF00u >> (x.bit_count % 8));
      const std::uint8_t zx = static_cast<std::uint8_t>(~x.payload[k]) & valid;
      const std::uint8_t zy = static_cast<std::uint8_t>(~y.payload[k]) & valid;
      inter += static_cast<std::uint64_t>(std::popcount(static_cast<std::uint8_t>(zx & zy)));
      uni += static_cast<std::uint64_t>(std::popcount(static_cast<std::uint8_t>(zx | zy)));
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace rmt
