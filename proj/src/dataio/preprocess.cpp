#include "wss/dataio/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "wss/error.hpp"

namespace wss {

double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw ValidationError("percentile of an empty set");
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Volume crop_to_brain_bbox(const Volume& v) {
  v.validate();
  std::array<Index, 3> lo{v.depth, v.height, v.width}, hi{-1, -1, -1};
  for (Index z = 0; z < v.depth; ++z) {
    for (Index y = 0; y < v.height; ++y) {
      for (Index x = 0; x < v.width; ++x) {
        bool any = false;
        for (Index c = 0; c < v.channels && !any; ++c) any = v.at(c, z, y, x) != 0.0f;
        if (!any) continue;
        lo = {std::min(lo[0], z), std::min(lo[1], y), std::min(lo[2], x)};
        hi = {std::max(hi[0], z), std::max(hi[1], y), std::max(hi[2], x)};
      }
    }
  }
  if (hi[0] < 0) throw ValidationError("volume " + v.id + " is all zero; no brain to crop");

  Volume out;
  out.id = v.id;
  out.channels = v.channels;
  out.depth = hi[0] - lo[0] + 1;
  out.height = hi[1] - lo[1] + 1;
  out.width = hi[2] - lo[2] + 1;
  out.data.resize(out.channels * out.voxels());
  if (v.mask) out.mask = MaskArray(out.voxels());
  for (Index z = 0; z < out.depth; ++z) {
    for (Index y = 0; y < out.height; ++y) {
      for (Index x = 0; x < out.width; ++x) {
        for (Index c = 0; c < v.channels; ++c) out.at(c, z, y, x) = v.at(c, z + lo[0], y + lo[1], x + lo[2]);
        if (v.mask) {
          (*out.mask)[(z * out.height + y) * out.width + x] =
              (*v.mask)[((z + lo[0]) * v.height + y + lo[1]) * v.width + x + lo[2]];
        }
      }
    }
  }
  return out;
}

Volume clip_and_normalize(const Volume& v, std::vector<std::string>* warnings) {
  v.validate();
  Volume out = v;
  const Index n = v.voxels();
  for (Index c = 0; c < v.channels; ++c) {
    auto ch = out.data.segment(c * n, n);
    std::vector<double> nz;
    for (Index i = 0; i < n; ++i) {
      if (ch[i] != 0.0f) nz.push_back(ch[i]);
    }
    if (nz.empty()) {
      throw ValidationError("volume " + v.id + ": channel " + std::to_string(c) + " has no nonzero voxels");
    }
    std::sort(nz.begin(), nz.end());
    const double p1 = percentile_sorted(nz, 1.0), p99 = percentile_sorted(nz, 99.0);
    for (Index i = 0; i < n; ++i) {
      if (ch[i] != 0.0f) ch[i] = static_cast<float>(std::clamp<double>(ch[i], p1, p99));
    }
    const double lo = ch.minCoeff(), hi = ch.maxCoeff();
    if (hi - lo <= 0.0) {
      ch.setConstant(0.5f);
      if (warnings) {
        warnings->push_back("volume " + v.id + ": channel " + std::to_string(c) +
                            " is constant; normalized to 0.5");
      }
      continue;
    }
    for (Index i = 0; i < n; ++i) ch[i] = static_cast<float>((ch[i] - lo) / (hi - lo));
  }
  return out;
}

Volume preprocess_volume(const Volume& volume, std::vector<std::string>* warnings) {
  return clip_and_normalize(crop_to_brain_bbox(volume), warnings);
}

namespace {

struct AxisWindow {
  Index src = 0;  // first source index copied
  Index dst = 0;  // destination offset
  Index len = 0;
};

AxisWindow place_axis(Index extent, Index patch, CropMode mode, Rng& rng) {
  if (extent >= patch) {
    const Index slack = extent - patch;
    const Index off = mode == CropMode::Center
                          ? slack / 2
                          : static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(slack + 1)));
    return {off, 0, patch};
  }
  return {0, (patch - extent) / 2, extent};
}

}  // namespace

std::vector<SliceSample> volume_to_slices(const Volume& v, const SliceOptions& o, Rng& rng) {
  v.validate();
  if (o.trim < 0 || o.patch <= 0) throw ValidationError("volume_to_slices: bad trim or patch size");
  if (v.depth <= 2 * static_cast<Index>(o.trim)) {
    throw ValidationError("volume " + v.id + ": depth " + std::to_string(v.depth) +
                          " is not greater than twice the trim " + std::to_string(o.trim));
  }
  const Index P = o.patch;
  std::vector<SliceSample> out;
  for (Index z = o.trim; z < v.depth - o.trim; ++z) {
    const AxisWindow wy = place_axis(v.height, P, o.mode, rng);
    const AxisWindow wx = place_axis(v.width, P, o.mode, rng);
    SliceSample s;
    s.volume_id = v.id;
    s.slice_index = static_cast<int>(z);
    s.channels = v.channels;
    s.size = P;
    s.image = Eigen::ArrayXf::Zero(v.channels * P * P);
    if (v.mask) s.truth_mask = MaskArray::Zero(P * P);
    for (Index y = 0; y < wy.len; ++y) {
      for (Index x = 0; x < wx.len; ++x) {
        const Index sy = wy.src + y, sx = wx.src + x, dy = wy.dst + y, dx = wx.dst + x;
        for (Index c = 0; c < v.channels; ++c) s.image[(c * P + dy) * P + dx] = v.at(c, z, sy, sx);
        if (v.mask) {
          (*s.truth_mask)[dy * P + dx] = (*v.mask)[(z * v.height + sy) * v.width + sx] ? 1 : 0;
        }
      }
    }
    s.label = s.truth_mask && (s.truth_mask->array() != 0).any() ? 1 : 0;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace wss
