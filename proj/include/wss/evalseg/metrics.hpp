#pragma once

#include <vector>

#include <Eigen/Core>

#include "wss/dataio/volume.hpp"

namespace wss {

struct BinaryMask {
  Index height = 0, width = 0;
  MaskArray pixels;

  BinaryMask() = default;
  BinaryMask(Index h, Index w) : height(h), width(w), pixels(MaskArray::Zero(h * w)) {}
  BinaryMask(Index h, Index w, MaskArray p);

  Index count() const;
  bool empty() const { return count() == 0; }
  bool operator()(Index y, Index x) const { return pixels[y * width + x] != 0; }
};

/// Scores assigned when one or both masks are empty.
struct EmptyMaskPolicy {
  double both_empty_dice = 1.0;
  double one_empty_dice = 0.0;
  double both_empty_hd95 = 0.0;
  /// One empty mask scores the image diagonal when true, otherwise `one_empty_hd95`.
  bool diagonal_sentinel = true;
  double one_empty_hd95 = 0.0;
};

/// 2|A n B| / (|A| + |B|).
double dice(const BinaryMask& pred, const BinaryMask& truth, const EmptyMaskPolicy& policy = {});

/// Mask pixels with at least one 4-neighbour outside the mask; pixels beyond the image count as outside.
BinaryMask boundary(const BinaryMask& mask);

/// Squared Euclidean distance from every pixel to the nearest set pixel of `sites`
/// (exact, separable lower-envelope transform). Pixels are at infinity when `sites` is empty.
Eigen::ArrayXd squared_distance_transform(const BinaryMask& sites);

/// 95th percentile (linear interpolation) of the pooled directed boundary-to-boundary distances.
double hd95(const BinaryMask& pred, const BinaryMask& truth, const EmptyMaskPolicy& policy = {});

/// True when hd95 would fall back to the one-empty convention.
inline bool hd95_is_sentinel(const BinaryMask& pred, const BinaryMask& truth) {
  return pred.empty() != truth.empty();
}

/// Empty when the gate rejects the image (prob < 0.5); otherwise heat >= threshold.
BinaryMask segment(double gate_probability, const Eigen::ArrayXd& heat, Index height, Index width, double threshold);

struct ThresholdSearch {
  double best = 0;
  std::vector<double> candidates;
  std::vector<double> mean_dice;
};

/// Candidates k * step strictly inside (0, 1); returns the highest mean validation Dice,
/// ties to the lower threshold. Gate probabilities, when given, are applied before scoring.
ThresholdSearch threshold_search(const std::vector<Eigen::ArrayXd>& heat, const std::vector<BinaryMask>& truth,
                                 double step = 0.1, const std::vector<double>& gate_probabilities = {},
                                 const EmptyMaskPolicy& policy = {});

}  // namespace wss
