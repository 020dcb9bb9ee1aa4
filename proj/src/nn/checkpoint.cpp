#include "anchorlab/nn/checkpoint.hpp"

#include <limits>

#include "anchorlab/common/binary_io.hpp"

namespace anchorlab::nn {

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& params) {
  io::ByteWriter w;
  w.str("AVCK");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw UsageError("parameter name too long: " + name);
    if (t.shape.size() > std::numeric_limits<std::uint8_t>::max()) throw UsageError("rank too large for " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.str(name);
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data) w.f32(v);
  }
  return w.buffer();
}

ParamStore decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.remaining() < 4 || r.str(4) != "AVCK") throw FormatError("bad checkpoint magic", 0);
  const std::size_t version_at = r.offset();
  if (r.u32() != kCheckpointVersion) throw FormatError("unsupported checkpoint version", version_at);
  const std::uint32_t count = r.u32();
  ParamStore out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_at = r.offset();
    std::string name = r.str(r.u16());
    const std::uint8_t rank = r.u8();
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32());
      n *= static_cast<std::uint64_t>(shape.back());
    }
    if (n * 4 > r.remaining()) throw FormatError("truncated payload for parameter '" + name + "'", r.offset());
    std::vector<float> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = r.f32();
    if (out.contains(name)) throw FormatError("duplicate parameter '" + name + "'", entry_at);
    out.insert(name, Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last parameter", r.offset());
  return out;
}

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(params));
}

ParamStore load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace anchorlab::nn
