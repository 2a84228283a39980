#include "wss/dataio/synth.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "wss/error.hpp"
#include "wss/numerics/random.hpp"

namespace wss {

namespace {

constexpr int kChannels = 4;
constexpr std::array<double, kChannels> kTissue{0.55, 0.50, 0.45, 0.40};
constexpr std::array<double, kChannels> kVentricle{-0.20, -0.18, 0.15, -0.12};
constexpr std::array<double, kChannels> kLesion{0.08, 0.12, 0.35, 0.55};
constexpr double kFeatherSigma = 1.5;  // pixels
// Bright specks above every tissue and lesion level. At more than 1% of brain voxels they pin the
// p99 clip in every volume, so normalization does not depend on whether a lesion is present.
constexpr double kHotFraction = 0.012;
constexpr double kHotLevel = 1.25;

/// Trilinear interpolation of an iid normal lattice: smooth, zero-mean, unit-scale noise.
Eigen::ArrayXf smooth_field(Rng& rng, Index D, Index H, Index W, Index grid) {
  const Index g = grid + 1;
  Eigen::ArrayXd lattice(g * g * g);
  for (Index i = 0; i < lattice.size(); ++i) lattice[i] = standard_normal(rng);
  auto coord = [&](Index i, Index n, Index& i0, double& t) {
    const double u = n > 1 ? static_cast<double>(i) * grid / static_cast<double>(n - 1) : 0.0;
    i0 = std::min<Index>(static_cast<Index>(u), grid - 1);
    t = u - static_cast<double>(i0);
  };
  Eigen::ArrayXf out(D * H * W);
  for (Index z = 0; z < D; ++z) {
    Index z0;
    double tz;
    coord(z, D, z0, tz);
    for (Index y = 0; y < H; ++y) {
      Index y0;
      double ty;
      coord(y, H, y0, ty);
      for (Index x = 0; x < W; ++x) {
        Index x0;
        double tx;
        coord(x, W, x0, tx);
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double w = (dz ? tz : 1 - tz) * (dy ? ty : 1 - ty) * (dx ? tx : 1 - tx);
              acc += w * lattice[((z0 + dz) * g + y0 + dy) * g + x0 + dx];
            }
        out[(z * H + y) * W + x] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

struct Ellipsoid {
  std::array<double, 3> centre, radii;  // z, y, x

  double rho(Index z, Index y, Index x) const {
    const double dz = (static_cast<double>(z) - centre[0]) / radii[0];
    const double dy = (static_cast<double>(y) - centre[1]) / radii[1];
    const double dx = (static_cast<double>(x) - centre[2]) / radii[2];
    return std::sqrt(dz * dz + dy * dy + dx * dx);
  }
};

Volume make_volume(std::size_t index, bool tumor, Index D, Index E, std::uint64_t seed) {
  Rng rng(derive_seed(seed, index));
  Volume v;
  char id[32];
  std::snprintf(id, sizeof id, "synth_%04zu", index);
  v.id = id;
  v.channels = kChannels;
  v.depth = D;
  v.height = E;
  v.width = E;
  v.data = Eigen::ArrayXf::Zero(kChannels * v.voxels());
  v.mask = MaskArray::Zero(v.voxels());

  const double e = static_cast<double>(E), d = static_cast<double>(D);
  const Ellipsoid brain{{(d - 1) / 2, (e - 1) / 2 + uniform(rng, -0.03, 0.03) * e,
                         (e - 1) / 2 + uniform(rng, -0.03, 0.03) * e},
                        {0.75 * d, uniform(rng, 0.36, 0.44) * e, uniform(rng, 0.32, 0.40) * e}};
  const Ellipsoid ventricle{{brain.centre[0], brain.centre[1] + uniform(rng, -0.04, 0.04) * e, brain.centre[2]},
                            {0.6 * d, uniform(rng, 0.08, 0.13) * e, uniform(rng, 0.05, 0.08) * e}};
  Ellipsoid lesion{};
  if (tumor) {
    const double angle = uniform(rng, 0.0, 6.283185307179586), r = std::sqrt(uniform01(rng)) * 0.45;
    lesion = {{brain.centre[0] + uniform(rng, -0.1, 0.1) * d, brain.centre[1] + r * brain.radii[1] * std::sin(angle),
               brain.centre[2] + r * brain.radii[2] * std::cos(angle)},
              {d, uniform(rng, 0.08, 0.18) * e, uniform(rng, 0.08, 0.18) * e}};
  }
  const double lesion_px = 0.5 * (lesion.radii[1] + lesion.radii[2]);

  std::array<Eigen::ArrayXf, kChannels> fields;
  for (auto& f : fields) f = smooth_field(rng, D, E, E, 4);
  const Eigen::ArrayXf lesion_texture = smooth_field(rng, D, E, E, 6);
  std::array<double, kChannels> gain;
  for (double& g : gain) g = uniform(rng, 400.0, 1200.0);

  for (Index z = 0; z < D; ++z) {
    for (Index y = 0; y < E; ++y) {
      for (Index x = 0; x < E; ++x) {
        if (brain.rho(z, y, x) > 1.0) continue;
        const Index s = (z * E + y) * E + x;
        const bool in_ventricle = ventricle.rho(z, y, x) <= 1.0;
        double w = 0.0;
        if (tumor) {
          const double r = lesion.rho(z, y, x);
          if (r <= 1.0) {
            w = 1.0;
          } else {
            const double t = (r - 1.0) * lesion_px / kFeatherSigma;
            w = std::exp(-0.5 * t * t);
          }
          if (w >= 0.5) (*v.mask)[s] = 1;
        }
        const bool hot = bernoulli(rng, kHotFraction);
        for (int c = 0; c < kChannels; ++c) {
          double val = kTissue[c] * (1.0 + 0.08 * fields[c][s]) + 0.015 * standard_normal(rng);
          if (in_ventricle) val += kVentricle[c];
          val += w * kLesion[c] * (1.0 + 0.1 * lesion_texture[s]);
          if (hot) val = kHotLevel * (1.0 + 0.02 * standard_normal(rng));
          v.at(c, z, y, x) = static_cast<float>(std::max(std::round(gain[c] * val), 1.0));
        }
      }
    }
  }
  return v;
}

}  // namespace

std::vector<Volume> synth_generate(const SynthConfig& config) {
  if (config.extent < 32) throw ValidationError("synth: extent must be at least 32");
  if (config.depth != 0 && config.depth < 8) throw ValidationError("synth: depth must be at least 8");
  if (!(config.tumor_probability >= 0.0 && config.tumor_probability <= 1.0)) {
    throw ValidationError("synth: tumor_probability must lie in [0,1]");
  }
  const Index depth = config.depth ? config.depth : config.extent;
  const auto tumors = static_cast<std::size_t>(std::llround(config.tumor_probability * static_cast<double>(config.count)));
  std::vector<std::size_t> order(config.count);
  std::iota(order.begin(), order.end(), 0);
  Rng pick(derive_seed(config.seed, 0x7e57ab1eULL));
  shuffle(order.begin(), order.end(), pick);
  std::vector<char> has_tumor(config.count, 0);
  for (std::size_t k = 0; k < tumors; ++k) has_tumor[order[k]] = 1;

  std::vector<Volume> out;
  out.reserve(config.count);
  for (std::size_t i = 0; i < config.count; ++i) {
    out.push_back(make_volume(i, has_tumor[i] != 0, depth, config.extent, config.seed));
  }
  return out;
}

}  // namespace wss
