#include "rmt/binary_io.hpp"
#include "rmt/errors.hpp"
#include "rmt/model.hpp"

namespace rmt {
namespace {
constexpr char kMagic[4] = {'R', 'M', 'T', 'W'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const DualEncoder& model) {
  io::ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kVersion);
  for (const auto& [name, t] : model.named_parameters()) {
    w.str16(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }
  return w.take();
}

DualEncoder decode_checkpoint(std::span<const std::uint8_t> bytes, const MaskSettings& mask) {
  io::ByteReader r(bytes);
  if (r.raw(4, "magic") != std::string_view(kMagic, 4)) throw FormatError("not a model checkpoint (bad magic)", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  std::vector<std::pair<std::string, Tensor>> params;
  while (!r.at_end()) {
    std::string name = r.str16("tensor name");
    const std::uint8_t ndim = r.u8("ndim of '" + name + "'");
    Shape shape;
    for (std::uint8_t d = 0; d < ndim; ++d) shape.push_back(r.u64("dims of '" + name + "'"));
    const std::size_t n = shape_size(shape);
    if (n > r.remaining() / 8) r.fail("truncated payload for '" + name + "'");
    std::vector<double> data(n);
    for (double& v : data) v = r.f64("payload of '" + name + "'");
    params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  try {
    return DualEncoder::from_named(params, mask);
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("invalid checkpoint contents: ") + e.what(), r.offset());
  }
}

void save_checkpoint(const DualEncoder& model, const std::string& path) {
  io::write_file(path, encode_checkpoint(model));
}

DualEncoder load_checkpoint(const std::string& path, const MaskSettings& mask) {
  return decode_checkpoint(io::read_file(path), mask);
}

}  // namespace rmt
