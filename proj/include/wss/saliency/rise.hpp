#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "wss/classifier/gate_classifier.hpp"

namespace wss {

struct MaskBankConfig {
  std::size_t count = 4000;
  int grid = 7;
  double keep_probability = 0.5;
  std::uint64_t seed = 0;
};

/// RISE masks shared by every image: g x g Bernoulli grids, bilinearly upsampled to
/// (H + cell) x (W + cell) with cell = ceil(extent / g), shifted by up to one cell, cropped.
struct MaskBank {
  MaskBankConfig config;
  Index height = 0, width = 0;
  /// count x H x W, values in [0,1].
  Eigen::ArrayXf masks;

  Index pixels() const { return height * width; }
  auto mask(std::size_t i) const { return masks.segment(static_cast<Index>(i) * pixels(), pixels()); }
};

MaskBank build_mask_bank(const MaskBankConfig& config, Index height, Index width);

/// Scores a [B, C, H, W] batch of masked images; one score per image.
using ScoreFn = std::function<std::vector<double>(const Tensor<float>&)>;

/// H(u) = sum_i s_i m_i(u) / sum_i m_i(u), s_i the score of image * m_i (every channel masked
/// alike). Masks are probed in batches of `batch`; the reduction runs in mask order in double.
/// `image` is C x H x W. Throws if some pixel has zero total mask weight.
Eigen::ArrayXd rise_heatmap(const ScoreFn& score, const Eigen::ArrayXf& image, Index channels,
                            const MaskBank& bank, std::size_t batch = 128);

template <typename S>
Eigen::ArrayXd rise_heatmap(GateClassifier<S>& model, const SliceSample& slice, const MaskBank& bank,
                            std::size_t batch = 128);

}  // namespace wss
