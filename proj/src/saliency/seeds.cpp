#include "wss/saliency/seeds.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wss/binary_io.hpp"
#include "wss/error.hpp"
#include "wss/png.hpp"

namespace wss {

namespace {
constexpr char kMagic[8] = {'W', 'S', 'S', 'S', 'E', 'E', 'D', '1'};
}

SeedMap extract_seeds(const Eigen::ArrayXd& heatmap, Index height, Index width, double fraction) {
  const Index n = height * width;
  if (heatmap.size() != n) throw ShapeError("extract_seeds: heat map size does not match " + std::to_string(height) + "x" + std::to_string(width));
  if (!(fraction > 0.0 && fraction <= 0.5)) throw ValidationError("extract_seeds: fraction must lie in (0, 0.5]");
  if (!heatmap.allFinite()) throw NumericError("extract_seeds: heat map is not finite");
  if (heatmap.maxCoeff() == heatmap.minCoeff()) {
    throw ValidationError("extract_seeds: constant heat map (degenerate saliency)");
  }
  const auto k = static_cast<Index>(std::floor(fraction * static_cast<double>(n)));
  // Ascending by value; equal values in descending raster order. Negatives are the first k,
  // positives the last k.
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    return heatmap[a] != heatmap[b] ? heatmap[a] < heatmap[b] : a > b;
  });
  SeedMap s;
  s.height = height;
  s.width = width;
  s.positive = MaskArray::Zero(n);
  s.negative = MaskArray::Zero(n);
  for (Index i = 0; i < k; ++i) {
    s.negative[order[static_cast<std::size_t>(i)]] = 1;
    s.positive[order[static_cast<std::size_t>(n - 1 - i)]] = 1;
  }
  return s;
}

std::vector<char> encode_seed_map(const SeedMap& s) {
  ByteWriter w;
  w.raw(kMagic, 8);
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  for (Index i = 0; i < s.pixels(); ++i) {
    if (s.positive[i] && s.negative[i]) throw ValidationError("seed map: pixel " + std::to_string(i) + " is both positive and negative");
    w.u8(s.positive[i] ? 1 : (s.negative[i] ? 2 : 0));
  }
  return std::move(w.bytes);
}

SeedMap decode_seed_map(const std::vector<char>& bytes, const std::string& origin) {
  ByteReader r(bytes, origin);
  r.expect_magic(kMagic);
  SeedMap s;
  s.height = r.u32();
  s.width = r.u32();
  const auto n = static_cast<std::size_t>(s.pixels());
  if (n != r.remaining()) throw ValidationError(origin + ": expected " + std::to_string(n) + " seed bytes, found " + std::to_string(r.remaining()));
  s.positive = MaskArray::Zero(s.pixels());
  s.negative = MaskArray::Zero(s.pixels());
  for (Index i = 0; i < s.pixels(); ++i) {
    const std::uint8_t v = r.u8();
    if (v > 2) throw ValidationError(origin + ": invalid seed code " + std::to_string(v));
    s.positive[i] = v == 1;
    s.negative[i] = v == 2;
  }
  return s;
}

void write_seed_map(const std::filesystem::path& path, const SeedMap& seeds) { write_file(path, encode_seed_map(seeds)); }

SeedMap read_seed_map(const std::filesystem::path& path) { return decode_seed_map(read_file(path), path.string()); }

void write_seed_overlay(const std::filesystem::path& path, const SliceSample& slice, const SeedMap& seeds, Index channel) {
  if (seeds.height != slice.size || seeds.width != slice.size) throw ShapeError("seed overlay: seed map does not match the slice");
  if (channel < 0 || channel >= slice.channels) throw ValidationError("seed overlay: channel out of range");
  const Index P = slice.pixels();
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(3 * P));
  for (Index i = 0; i < P; ++i) {
    const double g = std::clamp<double>(slice.image[channel * P + i], 0.0, 1.0) * 255.0;
    double c[3] = {g, g, g};
    if (seeds.positive[i] || seeds.negative[i]) {
      const double tint[3] = {seeds.positive[i] ? 0.0 : 255.0, 255.0 * seeds.positive[i], seeds.positive[i] ? 0.0 : 255.0};
      for (int k = 0; k < 3; ++k) c[k] = 0.5 * c[k] + 0.5 * tint[k];
    }
    for (int k = 0; k < 3; ++k) rgb[static_cast<std::size_t>(3 * i + k)] = static_cast<std::uint8_t>(std::lround(c[k]));
  }
  write_png_rgb(path, static_cast<int>(slice.size), static_cast<int>(slice.size), rgb);
}

void write_heatmap_png(const std::filesystem::path& path, const Eigen::ArrayXd& heatmap, Index height, Index width) {
  if (heatmap.size() != height * width) throw ShapeError("heat map png: size mismatch");
  const double lo = heatmap.minCoeff(), span = std::max(heatmap.maxCoeff() - lo, 1e-12);
  std::vector<std::uint8_t> gray(static_cast<std::size_t>(heatmap.size()));
  for (Index i = 0; i < heatmap.size(); ++i) gray[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(255.0 * (heatmap[i] - lo) / span));
  write_png_gray(path, static_cast<int>(width), static_cast<int>(height), gray);
}

}  // namespace wss
