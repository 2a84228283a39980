#pragma once

#include <vector>

#include "wss/numerics/checkpoint.hpp"
#include "wss/numerics/layers.hpp"

namespace wss {

/// Encoder-decoder with skip connections: one conv block per level, 2x2 max pooling down,
/// bilinear x2 up, concatenation with the matching encoder output, 1x1 head.
template <typename S>
class UNetTrunk {
 public:
  UNetTrunk() = default;
  UNetTrunk(Index in_channels, Index out_channels, const std::vector<Index>& widths, Rng& rng);

  /// [N, C, H, W] -> [N, out, H, W] raw head output. H and W must be divisible by 2^levels.
  Tensor<S> operator()(const Tensor<S>& x, bool training);
  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) const;
  void zero_head();
  Index levels() const { return static_cast<Index>(encoders_.size()); }

 private:
  std::vector<ConvBnRelu<S>> encoders_, decoders_;
  ConvBnRelu<S> bottleneck_;
  Conv2d<S> head_;
};

/// Q = softmax over N_S channels of the trunk output.
template <typename S>
class SuperpixelGenerator {
 public:
  SuperpixelGenerator() = default;
  SuperpixelGenerator(Index in_channels, Index superpixels, const std::vector<Index>& widths, Rng& rng)
      : trunk_(in_channels, superpixels, widths, rng), superpixels_(superpixels) {}

  Tensor<S> operator()(const Tensor<S>& x, bool training) { return softmax(trunk_(x, training), 1); }
  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) const {
    trunk_.collect(prefix, params, buffers);
  }
  Index superpixels() const { return superpixels_; }

 private:
  UNetTrunk<S> trunk_;
  Index superpixels_ = 0;
};

/// conv3x3(stride) -> BN -> ReLU -> conv3x3 -> BN, plus identity or 1x1(stride)+BN shortcut, ReLU.
template <typename S>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(Index in, Index out, int stride, Rng& rng);

  Tensor<S> operator()(const Tensor<S>& x, bool training);
  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) const;

 private:
  Conv2d<S> conv1_, conv2_, proj_;
  BatchNorm2d<S> bn1_, bn2_, proj_bn_;
};

/// ResNet-style clusterer over concat(image, Q): stem, one residual block per width (stride 2
/// after the first), global average pool, affine, softmax over N_S scores.
template <typename S>
class SuperpixelClusterer {
 public:
  SuperpixelClusterer() = default;
  SuperpixelClusterer(Index in_channels, Index superpixels, const std::vector<Index>& widths, Rng& rng);

  /// [N, C + N_S, H, W] -> R [N, N_S]
  Tensor<S> operator()(const Tensor<S>& x, bool training);
  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) const;

 private:
  ConvBnRelu<S> stem_;
  std::vector<ResidualBlock<S>> blocks_;
  Linear<S> head_;
};

/// Generator trunk with a one-channel sigmoid head emitting tumor probability directly.
template <typename S>
class AblationNet {
 public:
  AblationNet() = default;
  AblationNet(Index in_channels, const std::vector<Index>& widths, Rng& rng) : trunk_(in_channels, 1, widths, rng) {}

  /// [N, C, H, W] -> [N, H, W]
  Tensor<S> operator()(const Tensor<S>& x, bool training) {
    const Tensor<S> z = trunk_(x, training);
    return reshape(sigmoid(z), {z.dim(0), z.dim(2), z.dim(3)});
  }
  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) const {
    trunk_.collect(prefix, params, buffers);
  }
  void zero_head() { trunk_.zero_head(); }

 private:
  UNetTrunk<S> trunk_;
};

struct SpixelArch {
  Index in_channels = 4;
  Index superpixels = 64;
  std::vector<Index> generator_widths{16, 32, 64};
  std::vector<Index> clusterer_widths{16, 32, 64};
};

/// Generator and clusterer trained together; checkpoint names carry `gen.` / `clu.` prefixes.
template <typename S>
class SpixelModel {
 public:
  SpixelModel(const SpixelArch& arch, std::uint64_t seed);

  struct Output {
    Tensor<S> Q, R, heat;
  };
  Output forward(const Tensor<S>& images, bool training);

  const SpixelArch& arch() const { return arch_; }
  NamedTensors<S> parameters() const;
  NamedTensors<S> buffers() const;
  Checkpoint to_checkpoint() const;
  void load(const Checkpoint& ckpt);
  static SpixelModel from_checkpoint(const Checkpoint& ckpt);

 private:
  SpixelArch arch_;
  SuperpixelGenerator<S> gen_;
  SuperpixelClusterer<S> clu_;
};

/// Ablation model wrapper with checkpoint support under the `abl.` prefix.
template <typename S>
class AblationModel {
 public:
  AblationModel(Index in_channels, const std::vector<Index>& widths, std::uint64_t seed);

  Tensor<S> forward(const Tensor<S>& images, bool training) { return net_(images, training); }
  void zero_head() { net_.zero_head(); }
  NamedTensors<S> parameters() const;
  NamedTensors<S> buffers() const;
  Checkpoint to_checkpoint() const;
  void load(const Checkpoint& ckpt);
  static AblationModel from_checkpoint(const Checkpoint& ckpt);

 private:
  Index in_channels_;
  std::vector<Index> widths_;
  AblationNet<S> net_;
};

extern template class UNetTrunk<float>;
extern template class UNetTrunk<double>;
extern template class ResidualBlock<float>;
extern template class ResidualBlock<double>;
extern template class SuperpixelClusterer<float>;
extern template class SuperpixelClusterer<double>;
extern template class SpixelModel<float>;
extern template class SpixelModel<double>;
extern template class AblationModel<float>;
extern template class AblationModel<double>;

}  // namespace wss
