#include "wss/classifier/gate_classifier.hpp"

#include <algorithm>

#include "wss/error.hpp"

namespace wss {

template <typename S>
GateClassifier<S>::GateClassifier(const ClassifierConfig& config, std::uint64_t seed) : config_(config) {
  if (config.widths.empty()) throw ValidationError("classifier: at least one conv block is required");
  if (config.upsample < 1 || config.convs_per_block < 1) throw ValidationError("classifier: bad upsample or block depth");
  Rng rng(seed);
  Index in = config.in_channels;
  for (Index w : config.widths) {
    for (int k = 0; k < config.convs_per_block; ++k) {
      convs_.emplace_back(in, w, rng);
      in = w;
    }
  }
  head_ = Linear<S>(in, 1, rng);
}

template <typename S>
Tensor<S> GateClassifier<S>::logits(const Tensor<S>& images, bool training) {
  if (images.rank() != 4 || images.dim(1) != config_.in_channels) {
    throw ShapeError("classifier: expected [N," + std::to_string(config_.in_channels) + ",H,W] input, got " +
                     shape_str(images.shape()));
  }
  Tensor<S> h = config_.upsample > 1 ? upsample_bilinear(images, config_.upsample) : images;
  std::size_t k = 0;
  for (std::size_t b = 0; b < config_.widths.size(); ++b) {
    for (int j = 0; j < config_.convs_per_block; ++j) h = convs_[k++](h, training);
    if (h.dim(2) >= 2 && h.dim(3) >= 2) h = max_pool2x2(h);
  }
  return head_(global_avg_pool(h));
}

template <typename S>
Tensor<S> GateClassifier<S>::forward(const Tensor<S>& images, bool training) {
  const Tensor<S> z = logits(images, training);
  return reshape(sigmoid(z), {z.dim(0)});
}

template <typename S>
std::vector<double> GateClassifier<S>::predict(const Tensor<S>& images, Index chunk) {
  NoGradGuard no_grad;
  const Index n = images.dim(0), per = images.numel() / std::max<Index>(n, 1);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Index first = 0; first < n; first += chunk) {
    const Index m = std::min(chunk, n - first);
    Shape shape = images.shape();
    shape[0] = m;
    Tensor<S> part(shape, typename Tensor<S>::Array(images.value().segment(first * per, m * per)));
    const Tensor<S> p = forward(part, false);
    for (Index i = 0; i < m; ++i) out.push_back(static_cast<double>(p.value()[i]));
  }
  return out;
}

template <typename S>
void GateClassifier<S>::zero_head() {
  head_.weight.mutable_value().setZero();
  head_.bias.mutable_value().setZero();
}

template <typename S>
NamedTensors<S> GateClassifier<S>::parameters() const {
  NamedTensors<S> p, unused;
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect("block" + std::to_string(i), p, unused);
  head_.collect("head", p);
  return p;
}

template <typename S>
NamedTensors<S> GateClassifier<S>::buffers() const {
  NamedTensors<S> unused, b;
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect("block" + std::to_string(i), unused, b);
  return b;
}

template <typename S>
Checkpoint GateClassifier<S>::to_checkpoint() const {
  Checkpoint ckpt;
  store(ckpt, parameters());
  store(ckpt, buffers());
  StoredTensor widths{{static_cast<Index>(config_.widths.size())}, {}};
  for (Index w : config_.widths) widths.values.push_back(static_cast<float>(w));
  ckpt["meta.widths"] = widths;
  ckpt["meta.arch"] = StoredTensor{{3},
                                   {static_cast<float>(config_.convs_per_block), static_cast<float>(config_.upsample),
                                    static_cast<float>(config_.in_channels)}};
  return ckpt;
}

template <typename S>
void GateClassifier<S>::load(const Checkpoint& ckpt) {
  auto p = parameters();
  auto b = buffers();
  restore(ckpt, p);
  restore(ckpt, b);
}

template <typename S>
GateClassifier<S> GateClassifier<S>::from_checkpoint(const Checkpoint& ckpt) {
  const auto w = ckpt.find("meta.widths"), a = ckpt.find("meta.arch");
  if (w == ckpt.end() || a == ckpt.end() || a->second.values.size() != 3) {
    throw ValidationError("checkpoint does not describe a classifier (missing meta.widths/meta.arch)");
  }
  ClassifierConfig cfg;
  cfg.widths.clear();
  for (float v : w->second.values) cfg.widths.push_back(static_cast<Index>(v));
  cfg.convs_per_block = static_cast<int>(a->second.values[0]);
  cfg.upsample = static_cast<int>(a->second.values[1]);
  cfg.in_channels = static_cast<Index>(a->second.values[2]);
  GateClassifier model(cfg, 0);
  model.load(ckpt);
  return model;
}

template <typename S>
std::vector<double> classify(GateClassifier<S>& model, const std::vector<SliceSample>& slices) {
  std::vector<double> out;
  constexpr std::size_t kChunk = 64;
  for (std::size_t first = 0; first < slices.size(); first += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = first; i < std::min(slices.size(), first + kChunk); ++i) idx.push_back(i);
    const auto p = model.predict(stack_images<S>(slices, idx));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<std::size_t> gate(const std::vector<double>& probabilities, double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i] >= threshold) out.push_back(i);
  }
  return out;
}

template class GateClassifier<float>;
template class GateClassifier<double>;
template std::vector<double> classify(GateClassifier<float>&, const std::vector<SliceSample>&);
template std::vector<double> classify(GateClassifier<double>&, const std::vector<SliceSample>&);

}  // namespace wss
