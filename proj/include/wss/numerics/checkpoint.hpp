#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wss/numerics/layers.hpp"

namespace wss {

struct StoredTensor {
  Shape shape;
  std::vector<float> values;
};

/// Name-keyed tensor container; std::map keeps names sorted, which fixes the on-disk order.
using Checkpoint = std::map<std::string, StoredTensor>;

/// "WSSCKPT1", then per tensor in sorted-name order: u32 name length, UTF-8 name, u32 rank,
/// u32 extents, raw f32 values, all little-endian.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);
std::vector<char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<char>& bytes, const std::string& origin = "<memory>");

template <typename S>
void store(Checkpoint& ckpt, const NamedTensors<S>& tensors, const std::string& prefix = "") {
  for (const auto& [name, t] : tensors.items) {
    StoredTensor st{t.shape(), std::vector<float>(static_cast<std::size_t>(t.numel()))};
    for (Index i = 0; i < t.numel(); ++i) st.values[static_cast<std::size_t>(i)] = static_cast<float>(t.value()[i]);
    ckpt[prefix + name] = std::move(st);
  }
}

/// Copies stored values into the given leaves; every name must be present with a matching shape.
template <typename S>
void restore(const Checkpoint& ckpt, NamedTensors<S>& tensors, const std::string& prefix = "") {
  for (auto& [name, t] : tensors.items) {
    auto it = ckpt.find(prefix + name);
    if (it == ckpt.end()) throw ValidationError("checkpoint: missing tensor '" + prefix + name + "'");
    if (it->second.shape != t.shape()) {
      throw ValidationError("checkpoint: tensor '" + prefix + name + "' has shape " + shape_str(it->second.shape) +
                            ", model expects " + shape_str(t.shape()));
    }
    auto& v = t.mutable_value();
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(it->second.values[static_cast<std::size_t>(i)]);
  }
}

}  // namespace wss
