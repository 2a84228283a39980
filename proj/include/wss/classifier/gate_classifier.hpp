#pragma once

#include <vector>

#include "wss/dataio/volume.hpp"
#include "wss/numerics/checkpoint.hpp"
#include "wss/numerics/layers.hpp"

namespace wss {

struct ClassifierConfig {
  /// One block per entry: conv3x3 -> BN -> ReLU (convs_per_block times), then 2x2 max pool.
  std::vector<Index> widths{16, 32, 64, 64};
  int convs_per_block = 1;
  int upsample = 2;
  Index in_channels = 4;
};

/// VGG-style tumor-presence classifier: bilinear x`upsample` input, conv blocks, global
/// average pool, affine head to one logit.
template <typename S>
class GateClassifier {
 public:
  GateClassifier(const ClassifierConfig& config, std::uint64_t seed);

  /// [N, C, H, W] -> [N, 1] logits.
  Tensor<S> logits(const Tensor<S>& images, bool training);
  /// [N, C, H, W] -> [N] probabilities.
  Tensor<S> forward(const Tensor<S>& images, bool training);
  /// Eval mode, no graph, fixed chunks so each probability is independent of its neighbours.
  std::vector<double> predict(const Tensor<S>& images, Index chunk = 64);

  void zero_head();

  const ClassifierConfig& config() const { return config_; }
  NamedTensors<S> parameters() const;
  NamedTensors<S> buffers() const;

  /// Parameters, buffers, and the architecture under "meta.*".
  Checkpoint to_checkpoint() const;
  void load(const Checkpoint& ckpt);
  static GateClassifier from_checkpoint(const Checkpoint& ckpt);

 private:
  ClassifierConfig config_;
  std::vector<ConvBnRelu<S>> convs_;
  Linear<S> head_;
};

/// Probability of tumor for each slice, in slice order.
template <typename S>
std::vector<double> classify(GateClassifier<S>& model, const std::vector<SliceSample>& slices);

/// Indices with probability >= threshold (inclusive).
std::vector<std::size_t> gate(const std::vector<double>& probabilities, double threshold = 0.5);

extern template class GateClassifier<float>;
extern template class GateClassifier<double>;

}  // namespace wss
