#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "wss/numerics/ops.hpp"
#include "wss/numerics/random.hpp"

namespace wss {

/// Ordered (name, tensor) list. Names are dotted paths such as "enc0.conv.weight".
template <typename S>
struct NamedTensors {
  std::vector<std::pair<std::string, Tensor<S>>> items;

  void add(std::string name, Tensor<S> t) { items.emplace_back(std::move(name), std::move(t)); }
  void append(const NamedTensors& other) { items.insert(items.end(), other.items.begin(), other.items.end()); }
  std::size_t size() const { return items.size(); }
  Index numel() const {
    Index n = 0;
    for (const auto& [_, t] : items) n += t.numel();
    return n;
  }
};

template <typename S>
Tensor<S> uniform_tensor(Shape shape, double bound, Rng& rng) {
  typename Tensor<S>::Array v(shape_numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(uniform(rng, -bound, bound));
  return Tensor<S>(std::move(shape), std::move(v), true);
}

template <typename S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(Index in, Index out, int kernel, Rng& rng, int stride = 1, int padding = -1, bool with_bias = true)
      : stride_(stride), padding_(padding < 0 ? kernel / 2 : padding) {
    const double fan_in = static_cast<double>(in * kernel * kernel);
    weight = uniform_tensor<S>({out, in, kernel, kernel}, std::sqrt(6.0 / fan_in), rng);
    if (with_bias) bias = Tensor<S>({out}, S(0), true);
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return conv2d(x, weight, bias, stride_, padding_); }

  void collect(const std::string& prefix, NamedTensors<S>& params) const {
    params.add(prefix + ".weight", weight);
    if (bias.defined()) params.add(prefix + ".bias", bias);
  }

  Tensor<S> weight, bias;

 private:
  int stride_ = 1, padding_ = 0;
};

template <typename S>
class BatchNorm2d {
 public:
  static constexpr double kMomentum = 0.9;
  static constexpr double kEps = 1e-5;

  BatchNorm2d() = default;
  explicit BatchNorm2d(Index channels)
      : gamma({channels}, S(1), true), beta({channels}, S(0), true),
        running_mean({channels}, S(0)), running_var({channels}, S(1)) {}

  Tensor<S> operator()(const Tensor<S>& x, bool training) {
    return batch_norm2d(x, gamma, beta, running_mean, running_var, training, S(kMomentum), S(kEps));
  }

  void collect(const std::string& prefix, NamedTensors<S>& params) const {
    params.add(prefix + ".gamma", gamma);
    params.add(prefix + ".beta", beta);
  }
  void collect_buffers(const std::string& prefix, NamedTensors<S>& buffers) const {
    buffers.add(prefix + ".running_mean", running_mean);
    buffers.add(prefix + ".running_var", running_var);
  }

  Tensor<S> gamma, beta, running_mean, running_var;
};

template <typename S>
class Linear {
 public:
  Linear() = default;
  Linear(Index in, Index out, Rng& rng) {
    weight = uniform_tensor<S>({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    bias = Tensor<S>({out}, S(0), true);
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, NamedTensors<S>& params) const {
    params.add(prefix + ".weight", weight);
    params.add(prefix + ".bias", bias);
  }

  Tensor<S> weight, bias;
};

/// conv3x3 -> batch norm -> ReLU, the building block shared by every network here.
template <typename S>
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(Index in, Index out, Rng& rng, int stride = 1)
      : conv(in, out, 3, rng, stride, 1, false), bn(out) {}

  Tensor<S> operator()(const Tensor<S>& x, bool training) { return relu(bn(conv(x), training)); }

  void collect(const std::string& prefix, NamedTensors<S>& params, NamedTensors<S>& buffers) const {
    conv.collect(prefix + ".conv", params);
    bn.collect(prefix + ".bn", params);
    bn.collect_buffers(prefix + ".bn", buffers);
  }

  Conv2d<S> conv;
  BatchNorm2d<S> bn;
};

}  // namespace wss
