#include "wss/superpix/networks.hpp"

#include "wss/error.hpp"
#include "wss/superpix/losses.hpp"

namespace wss {

template <typename S>
UNetTrunk<S>::UNetTrunk(Index in_channels, Index out_channels, const std::vector<Index>& widths, Rng& rng) {
  if (widths.empty()) throw ValidationError("generator: at least one level is required");
  Index in = in_channels;
  for (Index w : widths) {
    encoders_.emplace_back(in, w, rng);
    in = w;
  }
  bottleneck_ = ConvBnRelu<S>(in, in, rng);
  Index below = in;
  for (std::size_t i = widths.size(); i-- > 0;) {
    decoders_.emplace_back(below + widths[i], widths[i], rng);
    below = widths[i];
  }
  head_ = Conv2d<S>(below, out_channels, 1, rng, 1, 0, true);
}

template <typename S>
Tensor<S> UNetTrunk<S>::operator()(const Tensor<S>& x, bool training) {
  const Index factor = Index{1} << levels();
  if (x.rank() != 4 || x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
    throw ShapeError("generator: input " + shape_str(x.shape()) + " must be [N,C,H,W] with H and W divisible by " +
                     std::to_string(factor));
  }
  std::vector<Tensor<S>> skips;
  Tensor<S> h = x;
  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    h = encoders_[i](i == 0 ? h : max_pool2x2(h), training);
    skips.push_back(h);
  }
  h = bottleneck_(max_pool2x2(h), training);
  for (std::size_t i = 0; i < decoders_.size(); ++i) {
    h = decoders_[i](concat<S>({upsample_bilinear(h, 2), skips[skips.size() - 1 - i]}, 1), training);
  }
  return head_(h);
}

template <typename S>
void UNetTrunk<S>::collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) const {
  for (std::size_t i = 0; i < encoders_.size(); ++i) encoders_[i].collect(prefix + "enc" + std::to_string(i), params, buffers);
  bottleneck_.collect(prefix + "mid", params, buffers);
  for (std::size_t i = 0; i < decoders_.size(); ++i) decoders_[i].collect(prefix + "dec" + std::to_string(i), params, buffers);
  head_.collect(prefix + "head", params);
}

template <typename S>
void UNetTrunk<S>::zero_head() {
  head_.weight.mutable_value().setZero();
  head_.bias.mutable_value().setZero();
}

template <typename S>
ResidualBlock<S>::ResidualBlock(Index in, Index out, int stride, Rng& rng)
    : conv1_(in, out, 3, rng, stride, 1, false), conv2_(out, out, 3, rng, 1, 1, false), bn1_(out), bn2_(out) {
  if (stride != 1 || in != out) {
    proj_ = Conv2d<S>(in, out, 1, rng, stride, 0, false);
    proj_bn_ = BatchNorm2d<S>(out);
  }
}

template <typename S>
Tensor<S> ResidualBlock<S>::operator()(const Tensor<S>& x, bool training) {
  const Tensor<S> h = bn2_(conv2_(relu(bn1_(conv1_(x), training))), training);
  const Tensor<S> shortcut = proj_.weight.defined() ? proj_bn_(proj_(x), training) : x;
  return relu(h + shortcut);
}

template <typename S>
void ResidualBlock<S>::collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) const {
  conv1_.collect(prefix + ".conv1", params);
  bn1_.collect(prefix + ".bn1", params);
  bn1_.collect_buffers(prefix + ".bn1", buffers);
  conv2_.collect(prefix + ".conv2", params);
  bn2_.collect(prefix + ".bn2", params);
  bn2_.collect_buffers(prefix + ".bn2", buffers);
  if (proj_.weight.defined()) {
    proj_.collect(prefix + ".proj", params);
    proj_bn_.collect(prefix + ".proj_bn", params);
    proj_bn_.collect_buffers(prefix + ".proj_bn", buffers);
  }
}

template <typename S>
SuperpixelClusterer<S>::SuperpixelClusterer(Index in_channels, Index superpixels, const std::vector<Index>& widths,
                                            Rng& rng) {
  if (widths.empty()) throw ValidationError("clusterer: at least one stage is required");
  stem_ = ConvBnRelu<S>(in_channels, widths[0], rng);
  Index in = widths[0];
  for (std::size_t i = 0; i < widths.size(); ++i) {
    blocks_.emplace_back(in, widths[i], i == 0 ? 1 : 2, rng);
    in = widths[i];
  }
  head_ = Linear<S>(in, superpixels, rng);
}

template <typename S>
Tensor<S> SuperpixelClusterer<S>::operator()(const Tensor<S>& x, bool training) {
  Tensor<S> h = stem_(x, training);
  for (auto& b : blocks_) h = b(h, training);
  return softmax(head_(global_avg_pool(h)), 1);
}

template <typename S>
void SuperpixelClusterer<S>::collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) const {
  stem_.collect(prefix + "stem", params, buffers);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(prefix + "block" + std::to_string(i), params, buffers);
  head_.collect(prefix + "head", params);
}

namespace {

StoredTensor index_list(const std::vector<Index>& v) {
  StoredTensor t{{static_cast<Index>(v.size())}, {}};
  for (Index x : v) t.values.push_back(static_cast<float>(x));
  return t;
}

std::vector<Index> read_index_list(const Checkpoint& ckpt, const std::string& name) {
  const auto it = ckpt.find(name);
  if (it == ckpt.end()) throw ValidationError("checkpoint: missing '" + name + "'");
  std::vector<Index> out;
  for (float v : it->second.values) out.push_back(static_cast<Index>(v));
  return out;
}

}  // namespace

template <typename S>
SpixelModel<S>::SpixelModel(const SpixelArch& arch, std::uint64_t seed) : arch_(arch) {
  if (arch.superpixels < 1) throw ValidationError("superpixel count must be positive");
  Rng gen_rng(derive_seed(seed, 1)), clu_rng(derive_seed(seed, 2));
  gen_ = SuperpixelGenerator<S>(arch.in_channels, arch.superpixels, arch.generator_widths, gen_rng);
  clu_ = SuperpixelClusterer<S>(arch.in_channels + arch.superpixels, arch.superpixels, arch.clusterer_widths, clu_rng);
}

template <typename S>
typename SpixelModel<S>::Output SpixelModel<S>::forward(const Tensor<S>& images, bool training) {
  if (images.rank() != 4 || images.dim(1) != arch_.in_channels) {
    throw ShapeError("superpixel model: expected [N," + std::to_string(arch_.in_channels) + ",H,W], got " +
                     shape_str(images.shape()));
  }
  Output out;
  out.Q = gen_(images, training);
  out.R = clu_(concat<S>({images, out.Q}, 1), training);
  out.heat = assemble_heatmap(out.Q, out.R);
  return out;
}

template <typename S>
NamedTensors<S> SpixelModel<S>::parameters() const {
  NamedTensors<S> p, b;
  gen_.collect("gen.", p, b);
  clu_.collect("clu.", p, b);
  return p;
}

template <typename S>
NamedTensors<S> SpixelModel<S>::buffers() const {
  NamedTensors<S> p, b;
  gen_.collect("gen.", p, b);
  clu_.collect("clu.", p, b);
  return b;
}

template <typename S>
Checkpoint SpixelModel<S>::to_checkpoint() const {
  Checkpoint ckpt;
  store(ckpt, parameters());
  store(ckpt, buffers());
  ckpt["meta.gen_widths"] = index_list(arch_.generator_widths);
  ckpt["meta.clu_widths"] = index_list(arch_.clusterer_widths);
  ckpt["meta.spixel"] = index_list({arch_.in_channels, arch_.superpixels});
  return ckpt;
}

template <typename S>
void SpixelModel<S>::load(const Checkpoint& ckpt) {
  auto p = parameters();
  auto b = buffers();
  restore(ckpt, p);
  restore(ckpt, b);
}

template <typename S>
SpixelModel<S> SpixelModel<S>::from_checkpoint(const Checkpoint& ckpt) {
  SpixelArch arch;
  arch.generator_widths = read_index_list(ckpt, "meta.gen_widths");
  arch.clusterer_widths = read_index_list(ckpt, "meta.clu_widths");
  const auto dims = read_index_list(ckpt, "meta.spixel");
  if (dims.size() != 2) throw ValidationError("checkpoint: malformed meta.spixel");
  arch.in_channels = dims[0];
  arch.superpixels = dims[1];
  SpixelModel model(arch, 0);
  model.load(ckpt);
  return model;
}

template <typename S>
AblationModel<S>::AblationModel(Index in_channels, const std::vector<Index>& widths, std::uint64_t seed)
    : in_channels_(in_channels), widths_(widths) {
  Rng rng(derive_seed(seed, 3));
  net_ = AblationNet<S>(in_channels, widths, rng);
}

template <typename S>
NamedTensors<S> AblationModel<S>::parameters() const {
  NamedTensors<S> p, b;
  net_.collect("abl.", p, b);
  return p;
}

template <typename S>
NamedTensors<S> AblationModel<S>::buffers() const {
  NamedTensors<S> p, b;
  net_.collect("abl.", p, b);
  return b;
}

template <typename S>
Checkpoint AblationModel<S>::to_checkpoint() const {
  Checkpoint ckpt;
  store(ckpt, parameters());
  store(ckpt, buffers());
  ckpt["meta.abl_widths"] = index_list(widths_);
  ckpt["meta.abl"] = index_list({in_channels_});
  return ckpt;
}

template <typename S>
void AblationModel<S>::load(const Checkpoint& ckpt) {
  auto p = parameters();
  auto b = buffers();
  restore(ckpt, p);
  restore(ckpt, b);
}

template <typename S>
AblationModel<S> AblationModel<S>::from_checkpoint(const Checkpoint& ckpt) {
  const auto dims = read_index_list(ckpt, "meta.abl");
  if (dims.size() != 1) throw ValidationError("checkpoint: malformed meta.abl");
  AblationModel model(dims[0], read_index_list(ckpt, "meta.abl_widths"), 0);
  model.load(ckpt);
  return model;
}

template class UNetTrunk<float>;
template class UNetTrunk<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class SuperpixelClusterer<float>;
template class SuperpixelClusterer<double>;
template class SpixelModel<float>;
template class SpixelModel<double>;
template class AblationModel<float>;
template class AblationModel<double>;

}  // namespace wss
