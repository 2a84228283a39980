#pragma once

#include <vector>

#include <Eigen/Core>

#include "wss/numerics/tensor.hpp"

namespace wss {

struct FelzenszwalbConfig {
  /// Scale for intensities in [0, 255]; images in [0, 1] use scale / 255.
  double scale = 100.0;
  double sigma = 0.8;
  Index min_size = 20;
  /// Upper end of the input intensity range: 1 for [0,1] images, 255 for 8-bit ones.
  double intensity_range = 1.0;
};

/// Separable Gaussian blur, kernel truncated at 4 sigma, reflected borders. sigma <= 0 copies.
Eigen::ArrayXf gaussian_blur(const Eigen::ArrayXf& image, Index height, Index width, double sigma);

/// Graph-based segmentation on the 8-connected grid. Returns one label per pixel, contiguous
/// from 0 in raster order of first appearance.
std::vector<int> felzenszwalb_segment(const Eigen::ArrayXf& image, Index height, Index width,
                                      const FelzenszwalbConfig& config = {});

inline int segment_count(const std::vector<int>& labels) {
  int n = 0;
  for (int l : labels) n = std::max(n, l + 1);
  return n;
}

}  // namespace wss
