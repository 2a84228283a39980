#pragma once

#include <vector>

#include "wss/numerics/tensor.hpp"

namespace wss {

// Elementwise arithmetic with numpy-style broadcasting.
template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b);

template <typename S> Tensor<S> add_scalar(const Tensor<S>& x, S c);
template <typename S> Tensor<S> mul_scalar(const Tensor<S>& x, S c);
/// c - x
template <typename S> Tensor<S> rsub_scalar(S c, const Tensor<S>& x);

template <typename S> Tensor<S> relu(const Tensor<S>& x);
template <typename S> Tensor<S> sigmoid(const Tensor<S>& x);
template <typename S> Tensor<S> log(const Tensor<S>& x);
/// Gradient passes where lo <= x <= hi.
template <typename S> Tensor<S> clamp(const Tensor<S>& x, S lo, S hi);
/// 1/x where x >= eps, 0 (with zero gradient) elsewhere.
template <typename S> Tensor<S> safe_reciprocal(const Tensor<S>& x, S eps);

template <typename S> Tensor<S> sum(const Tensor<S>& x);
template <typename S> Tensor<S> sum(const Tensor<S>& x, int axis, bool keepdim = false);
template <typename S> Tensor<S> mean(const Tensor<S>& x);
/// sum_i w_i x_i with constant weights of the same shape as x.
template <typename S> Tensor<S> weighted_sum(const Tensor<S>& x, const Tensor<S>& weights);
/// sum_i w_i x_i / sum_i w_i with constant weights.
template <typename S> Tensor<S> weighted_mean(const Tensor<S>& x, const Tensor<S>& weights);
/// Euclidean norm along one axis, which is removed. Zero-norm entries get zero gradient.
template <typename S> Tensor<S> l2_norm(const Tensor<S>& x, int axis);

template <typename S> Tensor<S> reshape(const Tensor<S>& x, Shape shape);
template <typename S> Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis);
template <typename S> Tensor<S> softmax(const Tensor<S>& x, int axis);

/// Rank-2 or batched rank-3 matrix product with optional transposes of the last two axes.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool transpose_a = false,
                 bool transpose_b = false);
/// x [N,F], weight [O,F], bias [O] (may be undefined) -> [N,O]
template <typename S> Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias);

/// x [N,C,H,W], weight [O,C,KH,KW], bias [O] (may be undefined), zero padding.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias,
                 int stride = 1, int padding = 0);
/// Half-pixel-centred bilinear upsampling by an integer factor, edges clamped.
template <typename S> Tensor<S> upsample_bilinear(const Tensor<S>& x, int factor);
template <typename S> Tensor<S> upsample_nearest(const Tensor<S>& x, int factor);
/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <typename S> Tensor<S> max_pool2x2(const Tensor<S>& x);
/// [N,C,H,W] -> [N,C]
template <typename S> Tensor<S> global_avg_pool(const Tensor<S>& x);

/// Per-channel batch normalization of [N,C,H,W]. In training mode batch statistics are
/// used and the running buffers are blended as running = momentum*running + (1-momentum)*batch
/// (unbiased variance). In eval mode the running buffers define a fixed affine map.
template <typename S>
Tensor<S> batch_norm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                       Tensor<S>& running_mean, Tensor<S>& running_var, bool training,
                       S momentum, S eps);

/// Mean binary cross-entropy of probabilities against constant {0,1} targets (same shape).
template <typename S>
Tensor<S> binary_cross_entropy(const Tensor<S>& probability, const Tensor<S>& target,
                               S clamp_eps = S(1e-7));

template <typename S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S> Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) { return div(a, b); }
template <typename S> Tensor<S> operator+(const Tensor<S>& a, S c) { return add_scalar(a, c); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, S c) { return mul_scalar(a, c); }
template <typename S> Tensor<S> operator*(S c, const Tensor<S>& a) { return mul_scalar(a, c); }
template <typename S> Tensor<S> operator-(S c, const Tensor<S>& a) { return rsub_scalar(c, a); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a) { return mul_scalar(a, S(-1)); }

}  // namespace wss
