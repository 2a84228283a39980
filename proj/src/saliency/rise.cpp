#include "wss/saliency/rise.hpp"

#include <cmath>

#include "wss/error.hpp"
#include "wss/numerics/random.hpp"

namespace wss {

namespace {

/// Half-pixel-centred bilinear map from `in` samples to `out` samples with clamped edges.
struct Lerp {
  std::vector<Index> i0, i1;
  std::vector<double> t;

  Lerp(Index in, Index out) : i0(out), i1(out), t(out) {
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (Index o = 0; o < out; ++o) {
      const double src = std::clamp((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      i0[o] = static_cast<Index>(std::floor(src));
      i1[o] = std::min(i0[o] + 1, in - 1);
      t[o] = src - static_cast<double>(i0[o]);
    }
  }
};

}  // namespace

MaskBank build_mask_bank(const MaskBankConfig& config, Index height, Index width) {
  if (config.grid < 2) throw ValidationError("mask bank: grid must be at least 2");
  if (!(config.keep_probability >= 0.0 && config.keep_probability <= 1.0)) {
    throw ValidationError("mask bank: keep probability must lie in [0,1]");
  }
  if (config.count == 0) throw ValidationError("mask bank: count must be positive");
  if (height <= 0 || width <= 0) throw ValidationError("mask bank: non-positive image extents");
  const Index g = config.grid;
  const Index cell_h = (height + g - 1) / g, cell_w = (width + g - 1) / g;
  const Index up_h = height + cell_h, up_w = width + cell_w;
  const Lerp ly(g, up_h), lx(g, up_w);

  MaskBank bank;
  bank.config = config;
  bank.height = height;
  bank.width = width;
  bank.masks.resize(static_cast<Index>(config.count) * height * width);
  Rng rng(config.seed);
  std::vector<double> grid(static_cast<std::size_t>(g * g));
  for (std::size_t m = 0; m < config.count; ++m) {
    for (double& v : grid) v = bernoulli(rng, config.keep_probability) ? 1.0 : 0.0;
    const auto dy = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(cell_h)));
    const auto dx = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(cell_w)));
    float* out = bank.masks.data() + static_cast<Index>(m) * height * width;
    for (Index y = 0; y < height; ++y) {
      const Index uy = y + dy;
      const double ty = ly.t[uy];
      const double* r0 = grid.data() + ly.i0[uy] * g;
      const double* r1 = grid.data() + ly.i1[uy] * g;
      for (Index x = 0; x < width; ++x) {
        const Index ux = x + dx;
        const double tx = lx.t[ux];
        const double top = r0[lx.i0[ux]] * (1 - tx) + r0[lx.i1[ux]] * tx;
        const double bottom = r1[lx.i0[ux]] * (1 - tx) + r1[lx.i1[ux]] * tx;
        out[y * width + x] = static_cast<float>(top * (1 - ty) + bottom * ty);
      }
    }
  }
  return bank;
}

Eigen::ArrayXd rise_heatmap(const ScoreFn& score, const Eigen::ArrayXf& image, Index channels, const MaskBank& bank,
                            std::size_t batch) {
  const Index P = bank.pixels();
  if (image.size() != channels * P) {
    throw ShapeError("rise: image of " + std::to_string(image.size()) + " values does not match the " +
                     std::to_string(bank.height) + "x" + std::to_string(bank.width) + " mask bank");
  }
  if (batch == 0) throw ValidationError("rise: batch size must be positive");
  Eigen::ArrayXd num = Eigen::ArrayXd::Zero(P), den = Eigen::ArrayXd::Zero(P);
  const std::size_t count = bank.config.count;
  for (std::size_t first = 0; first < count; first += batch) {
    const std::size_t b = std::min(batch, count - first);
    Tensor<float>::Array masked(static_cast<Index>(b) * channels * P);
    for (std::size_t i = 0; i < b; ++i) {
      const auto m = bank.mask(first + i);
      for (Index c = 0; c < channels; ++c) {
        masked.segment((static_cast<Index>(i) * channels + c) * P, P) = image.segment(c * P, P) * m;
      }
    }
    const auto scores = score(Tensor<float>({static_cast<Index>(b), channels, bank.height, bank.width}, std::move(masked)));
    if (scores.size() != b) throw ShapeError("rise: scorer returned " + std::to_string(scores.size()) + " scores for " + std::to_string(b) + " images");
    for (std::size_t i = 0; i < b; ++i) {
      const auto m = bank.mask(first + i).cast<double>();
      num += scores[i] * m;
      den += m;
    }
  }
  for (Index u = 0; u < P; ++u) {
    if (den[u] <= 0.0) {
      throw ValidationError("rise: pixel " + std::to_string(u) + " is never covered by the mask bank (bank too sparse)");
    }
  }
  return num / den;
}

template <typename S>
Eigen::ArrayXd rise_heatmap(GateClassifier<S>& model, const SliceSample& slice, const MaskBank& bank, std::size_t batch) {
  const ScoreFn score = [&model](const Tensor<float>& x) {
    if constexpr (std::is_same_v<S, float>) {
      return model.predict(x);
    } else {
      return model.predict(Tensor<S>(x.shape(), x.value().template cast<S>()));
    }
  };
  return rise_heatmap(score, slice.image, slice.channels, bank, batch);
}

template Eigen::ArrayXd rise_heatmap(GateClassifier<float>&, const SliceSample&, const MaskBank&, std::size_t);
template Eigen::ArrayXd rise_heatmap(GateClassifier<double>&, const SliceSample&, const MaskBank&, std::size_t);

}  // namespace wss
