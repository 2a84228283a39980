#include "wss/numerics/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "wss/binary_io.hpp"

namespace wss {

namespace {
constexpr char kMagic[8] = {'W', 'S', 'S', 'C', 'K', 'P', 'T', '1'};
}

std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(kMagic, 8);
  for (const auto& [name, t] : ckpt) {
    if (static_cast<Index>(t.values.size()) != shape_numel(t.shape)) {
      throw ShapeError("checkpoint: tensor '" + name + "' value count does not match " + shape_str(t.shape));
    }
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (Index e : t.shape) w.u32(static_cast<std::uint32_t>(e));
    for (float v : t.values) w.f32(v);
  }
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes, const std::string& origin) {
  ByteReader r(bytes, origin);
  r.expect_magic(kMagic);
  Checkpoint ckpt;
  while (!r.at_end()) {
    const std::uint32_t len = r.u32();
    std::string name = r.string(len);
    const std::uint32_t rank = r.u32();
    StoredTensor t;
    for (std::uint32_t i = 0; i < rank; ++i) t.shape.push_back(static_cast<Index>(r.u32()));
    const auto n = static_cast<std::size_t>(shape_numel(t.shape));
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.values[i] = r.f32();
    if (!ckpt.emplace(name, std::move(t)).second) {
      throw ValidationError(origin + ": duplicate tensor '" + name + "'");
    }
  }
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

}  // namespace wss
