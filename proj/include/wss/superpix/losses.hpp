#pragma once

#include <vector>

#include "wss/numerics/ops.hpp"
#include "wss/saliency/seeds.hpp"

namespace wss {

enum class SpixelLossForm {
  /// ||f(p) - sum_s u_s Q_s(p)|| + m ||p - sum_s l_s Q_s(p)||
  Reconstruction,
  /// ||sum_s u_s Q_s(p)|| + m ||sum_s l_s Q_s(p)||, kept for comparison only.
  Printed,
};

struct SpixelLossConfig {
  double m = 3.0 / 160.0;
  double alpha = 50.0;
  SpixelLossForm form = SpixelLossForm::Reconstruction;

  void validate() const;
};

/// Superpixels whose total association falls below this get zero mean intensity/location.
inline constexpr double kEmptySuperpixel = 1e-8;
inline constexpr double kLogClamp = 1e-7;

/// Q [N, S, H, W], R [N, S] -> H+ [N, H, W], clamped to [0,1].
template <typename S>
Tensor<S> assemble_heatmap(const Tensor<S>& Q, const Tensor<S>& R);

/// F [N, C, H, W], Q [N, S, H, W]; pixel coordinates run 1..H, 1..W. Averaged over N.
template <typename S>
Tensor<S> spixel_loss(const Tensor<S>& F, const Tensor<S>& Q, double m,
                      SpixelLossForm form = SpixelLossForm::Reconstruction);

/// H+ [N, H, W] against one seed map per image; H- = 1 - H+. Averaged over N.
template <typename S>
Tensor<S> seed_loss(const Tensor<S>& heat, const std::vector<SeedMap>& seeds);

template <typename S>
struct CombinedLoss {
  Tensor<S> total, spixel, seed;
};

/// L = L_spixel + alpha * L_seed on H+ = assemble_heatmap(Q, R).
template <typename S>
CombinedLoss<S> combined_loss(const Tensor<S>& F, const Tensor<S>& Q, const Tensor<S>& R,
                              const std::vector<SeedMap>& seeds, const SpixelLossConfig& config);

/// Superpixels that are the argmax association of at least one pixel; ties go to the lowest
/// index. Q is S x P for one image.
Index effective_superpixel_count(const Eigen::ArrayXd& Q, Index superpixels);

}  // namespace wss
