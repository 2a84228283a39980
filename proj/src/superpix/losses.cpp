#include "wss/superpix/losses.hpp"

#include <cmath>

#include "wss/error.hpp"

namespace wss {

void SpixelLossConfig::validate() const {
  if (!(m > 0.0)) throw ValidationError("superpixel loss: m must be positive");
  if (!(alpha >= 0.0)) throw ValidationError("superpixel loss: alpha must be non-negative");
}

template <typename S>
Tensor<S> assemble_heatmap(const Tensor<S>& Q, const Tensor<S>& R) {
  if (Q.rank() != 4 || R.rank() != 2 || Q.dim(0) != R.dim(0) || Q.dim(1) != R.dim(1)) {
    throw ShapeError("assemble_heatmap: Q " + shape_str(Q.shape()) + " and R " + shape_str(R.shape()) +
                     " must be [N,S,H,W] and [N,S]");
  }
  const Index N = Q.dim(0), Ns = Q.dim(1), H = Q.dim(2), W = Q.dim(3);
  const Tensor<S> h = matmul(reshape(R, {N, 1, Ns}), reshape(Q, {N, Ns, H * W}));
  return clamp(reshape(h, {N, H, W}), S(0), S(1));
}

namespace {

template <typename S>
void check_associations(const Tensor<S>& Q) {
  const Index N = Q.dim(0), Ns = Q.dim(1), P = Q.dim(2) * Q.dim(3);
  for (Index n = 0; n < N; ++n) {
    for (Index s = 0; s < Ns; ++s) {
      if (!Q.value().segment((n * Ns + s) * P, P).allFinite()) {
        throw NumericError("spixel_loss: superpixel " + std::to_string(s) + " of image " + std::to_string(n) +
                           " has non-finite associations");
      }
    }
  }
}

/// Reconstruction of `values` [N,K,P] through the superpixel means: (values Q^T) diag(1/mass) Q.
template <typename S>
Tensor<S> reconstruct(const Tensor<S>& values, const Tensor<S>& Qm, const Tensor<S>& inv_mass) {
  const Tensor<S> means = matmul(values, Qm, false, true) * inv_mass;
  return matmul(means, Qm);
}

}  // namespace

template <typename S>
Tensor<S> spixel_loss(const Tensor<S>& F, const Tensor<S>& Q, double m, SpixelLossForm form) {
  if (F.rank() != 4 || Q.rank() != 4 || F.dim(0) != Q.dim(0) || F.dim(2) != Q.dim(2) || F.dim(3) != Q.dim(3)) {
    throw ShapeError("spixel_loss: image " + shape_str(F.shape()) + " and associations " + shape_str(Q.shape()) +
                     " must share N, H, W");
  }
  if (!F.value().allFinite()) throw NumericError("spixel_loss: image contains non-finite values");
  check_associations(Q);
  const Index N = F.dim(0), C = F.dim(1), Ns = Q.dim(1), H = F.dim(2), W = F.dim(3), P = H * W;
  const Tensor<S> Fm = reshape(F, {N, C, P});
  const Tensor<S> Qm = reshape(Q, {N, Ns, P});
  const Tensor<S> inv_mass = reshape(safe_reciprocal(sum(Qm, 2), S(kEmptySuperpixel)), {N, 1, Ns});

  typename Tensor<S>::Array coords(N * 2 * P);
  for (Index n = 0; n < N; ++n) {
    for (Index y = 0; y < H; ++y) {
      for (Index x = 0; x < W; ++x) {
        coords[(n * 2 + 0) * P + y * W + x] = static_cast<S>(y + 1);
        coords[(n * 2 + 1) * P + y * W + x] = static_cast<S>(x + 1);
      }
    }
  }
  const Tensor<S> Pm({N, 2, P}, std::move(coords));

  const Tensor<S> f_rec = reconstruct(Fm, Qm, inv_mass);
  const Tensor<S> p_rec = reconstruct(Pm, Qm, inv_mass);
  const bool printed = form == SpixelLossForm::Printed;
  const Tensor<S> intensity = sum(l2_norm(printed ? f_rec : Fm - f_rec, 1));
  const Tensor<S> location = sum(l2_norm(printed ? p_rec : Pm - p_rec, 1));
  return (intensity + location * static_cast<S>(m)) * static_cast<S>(1.0 / static_cast<double>(N));
}

template <typename S>
Tensor<S> seed_loss(const Tensor<S>& heat, const std::vector<SeedMap>& seeds) {
  if (heat.rank() != 3 || static_cast<std::size_t>(heat.dim(0)) != seeds.size()) {
    throw ShapeError("seed_loss: heat map " + shape_str(heat.shape()) + " needs one seed map per image, got " +
                     std::to_string(seeds.size()));
  }
  const Index N = heat.dim(0), P = heat.dim(1) * heat.dim(2);
  typename Tensor<S>::Array wp(N * P), wn(N * P);
  for (Index n = 0; n < N; ++n) {
    const SeedMap& s = seeds[static_cast<std::size_t>(n)];
    if (s.height != heat.dim(1) || s.width != heat.dim(2)) throw ShapeError("seed_loss: seed map " + std::to_string(n) + " does not match the heat map");
    const double count = static_cast<double>(s.positive.template cast<int>().sum() + s.negative.template cast<int>().sum());
    if (count == 0) throw ValidationError("seed_loss: image " + std::to_string(n) + " has no seeds");
    const double w = 1.0 / (count * static_cast<double>(N));
    for (Index p = 0; p < P; ++p) {
      wp[n * P + p] = static_cast<S>(s.positive[p] ? w : 0.0);
      wn[n * P + p] = static_cast<S>(s.negative[p] ? w : 0.0);
    }
  }
  const Shape shape = heat.shape();
  const S lo = S(kLogClamp), hi = S(1) - S(kLogClamp);
  const Tensor<S> log_pos = log(clamp(heat, lo, hi));
  const Tensor<S> log_neg = log(clamp(S(1) - heat, lo, hi));
  return -(weighted_sum(log_pos, Tensor<S>(shape, std::move(wp))) + weighted_sum(log_neg, Tensor<S>(shape, std::move(wn))));
}

template <typename S>
CombinedLoss<S> combined_loss(const Tensor<S>& F, const Tensor<S>& Q, const Tensor<S>& R,
                              const std::vector<SeedMap>& seeds, const SpixelLossConfig& config) {
  config.validate();
  CombinedLoss<S> out;
  out.spixel = spixel_loss(F, Q, config.m, config.form);
  out.seed = seed_loss(assemble_heatmap(Q, R), seeds);
  out.total = config.alpha == 0.0 ? out.spixel : out.spixel + out.seed * static_cast<S>(config.alpha);
  return out;
}

Index effective_superpixel_count(const Eigen::ArrayXd& Q, Index superpixels) {
  if (superpixels <= 0 || Q.size() % superpixels != 0) throw ShapeError("effective_superpixel_count: Q size is not a multiple of N_S");
  const Index P = Q.size() / superpixels;
  std::vector<char> used(static_cast<std::size_t>(superpixels), 0);
  for (Index p = 0; p < P; ++p) {
    Index best = 0;
    for (Index s = 1; s < superpixels; ++s) {
      if (Q[s * P + p] > Q[best * P + p]) best = s;
    }
    used[static_cast<std::size_t>(best)] = 1;
  }
  Index n = 0;
  for (char u : used) n += u;
  return n;
}

#define WSS_INSTANTIATE_LOSSES(S)                                                                          \
  template Tensor<S> assemble_heatmap(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> spixel_loss(const Tensor<S>&, const Tensor<S>&, double, SpixelLossForm);              \
  template Tensor<S> seed_loss(const Tensor<S>&, const std::vector<SeedMap>&);                             \
  template CombinedLoss<S> combined_loss(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,             \
                                         const std::vector<SeedMap>&, const SpixelLossConfig&);

WSS_INSTANTIATE_LOSSES(float)
WSS_INSTANTIATE_LOSSES(double)

}  // namespace wss
