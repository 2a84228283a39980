#pragma once

#include <string>
#include <vector>

#include "wss/dataio/volume.hpp"
#include "wss/numerics/random.hpp"

namespace wss {

/// Linear-interpolation percentile (q in [0,100]) of already sorted values.
double percentile_sorted(const std::vector<double>& sorted, double q);

/// Tightest axis-aligned crop containing every voxel that is nonzero in any channel.
Volume crop_to_brain_bbox(const Volume& volume);

/// Per channel: clip nonzero voxels to their [p1, p99] band, then min-max scale the whole
/// channel to [0,1]. A channel whose values are all equal becomes 0.5 and a warning is
/// appended to `warnings` (when given).
Volume clip_and_normalize(const Volume& volume, std::vector<std::string>* warnings = nullptr);

enum class CropMode { Random, Center };

struct SliceOptions {
  int trim = 30;
  Index patch = 128;
  CropMode mode = CropMode::Center;
};

/// Emits axial slices trim..D-trim-1 cropped (or zero padded) to patch x patch in-plane.
/// Labels come from the cropped truth mask when one is present.
std::vector<SliceSample> volume_to_slices(const Volume& volume, const SliceOptions& options, Rng& rng);

/// crop_to_brain_bbox followed by clip_and_normalize.
Volume preprocess_volume(const Volume& volume, std::vector<std::string>* warnings = nullptr);

}  // namespace wss
