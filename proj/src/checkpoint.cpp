// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/checkpoint.hpp"

#include <limits>

#include "ddpolab/binary_io.hpp"

namespace ddpolab {
namespace {
constexpr std::string_view kMagic = "DDPOLAB1";
}

std::vector<std::uint8_t> serialize_checkpoint(const ParamStore& params) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(static_cast<std::uint32_t>(params.num_segments()));
  for (const Segment& s : params.segments()) {
    if (s.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("segment name too long: " + s.name);
    }
    w.u16(static_cast<std::uint16_t>(s.name.size()));
    w.bytes(s.name);
    w.u32(static_cast<std::uint32_t>(s.value.rank()));
    for (std::size_t e : s.value.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (double v : s.value.values()) w.f64(v);
  }
  return w.take();
}

ParamStore deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect(kMagic);
  const std::uint32_t count = r.u32();
  ParamStore params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.u16());
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
      e = r.u32();
      n *= e;
    }
    if (n > r.remaining() / 8) throw FormatError("segment '" + name + "' runs past end of file");
    std::vector<double> data(n);
    for (double& v : data) v = r.f64();
    params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint segments");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params) {
  write_file(path, serialize_checkpoint(params));
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

std::uint64_t checkpoint_hash(const ParamStore& params) {
  return fnv1a64(serialize_checkpoint(params));
}

}  // namespace ddpolab
