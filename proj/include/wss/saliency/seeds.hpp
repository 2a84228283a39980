#pragma once

#include <filesystem>

#include "wss/dataio/volume.hpp"

namespace wss {

/// Three-way localization seeds: S+ (positive) and S- (negative), disjoint.
struct SeedMap {
  Index height = 0, width = 0;
  MaskArray positive, negative;

  Index pixels() const { return height * width; }
};

/// Exactly floor(fraction * H * W) positive and negative pixels. Pixels are ranked by value
/// with ties ordered by raster index, so tied positives favour earlier pixels and tied
/// negatives later ones; the sets are disjoint for fraction <= 0.5. A constant map throws.
SeedMap extract_seeds(const Eigen::ArrayXd& heatmap, Index height, Index width, double fraction = 0.2);

/// "WSSSEED1", u32 H, u32 W, u8 per pixel: 0 unseeded, 1 positive, 2 negative.
std::vector<char> encode_seed_map(const SeedMap& seeds);
SeedMap decode_seed_map(const std::vector<char>& bytes, const std::string& origin);
void write_seed_map(const std::filesystem::path& path, const SeedMap& seeds);
SeedMap read_seed_map(const std::filesystem::path& path);

/// Grayscale background (one image channel, [0,1]) with green positive and magenta negative
/// seeds blended at 50%.
void write_seed_overlay(const std::filesystem::path& path, const SliceSample& slice, const SeedMap& seeds,
                        Index channel = 3);

/// Heat map in [min,max] rendered as grayscale.
void write_heatmap_png(const std::filesystem::path& path, const Eigen::ArrayXd& heatmap, Index height, Index width);

}  // namespace wss
