#include "wss/evalseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "wss/dataio/preprocess.hpp"
#include "wss/error.hpp"

namespace wss {

namespace {

void check_extent(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": mask extents " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " and " + std::to_string(b.height) + "x" + std::to_string(b.width) + " differ");
  }
}

/// Lower envelope of parabolas over one line: out[q] = min_p (q - p)^2 + f[p], taken over the
/// finite f only. All-infinite input stays infinite.
void envelope_1d(const std::vector<double>& f, std::vector<double>& out) {
  const Index n = static_cast<Index>(f.size());
  std::vector<Index> v;
  std::vector<double> z;
  auto meet = [&](Index p, Index q) {
    return ((f[static_cast<std::size_t>(q)] + static_cast<double>(q * q)) -
            (f[static_cast<std::size_t>(p)] + static_cast<double>(p * p))) /
           static_cast<double>(2 * (q - p));
  };
  for (Index q = 0; q < n; ++q) {
    if (!std::isfinite(f[static_cast<std::size_t>(q)])) continue;
    double s = -std::numeric_limits<double>::infinity();
    while (!v.empty()) {
      s = meet(v.back(), q);
      if (s > z.back()) break;
      v.pop_back();
      z.pop_back();
      s = -std::numeric_limits<double>::infinity();
    }
    v.push_back(q);
    z.push_back(s);
  }
  if (v.empty()) {
    std::fill(out.begin(), out.end(), std::numeric_limits<double>::infinity());
    return;
  }
  std::size_t k = 0;
  for (Index q = 0; q < n; ++q) {
    while (k + 1 < v.size() && z[k + 1] < static_cast<double>(q)) ++k;
    const Index p = v[k];
    out[static_cast<std::size_t>(q)] = static_cast<double>((q - p) * (q - p)) + f[static_cast<std::size_t>(p)];
  }
}

}  // namespace

BinaryMask::BinaryMask(Index h, Index w, MaskArray p) : height(h), width(w), pixels(std::move(p)) {
  if (pixels.size() != h * w) throw ShapeError("BinaryMask: pixel count does not match the extent");
}

Index BinaryMask::count() const { return (pixels != 0).count(); }

double dice(const BinaryMask& pred, const BinaryMask& truth, const EmptyMaskPolicy& policy) {
  check_extent(pred, truth, "dice");
  const Index a = pred.count(), b = truth.count();
  if (a == 0 && b == 0) return policy.both_empty_dice;
  if (a == 0 || b == 0) return policy.one_empty_dice;
  const Index both = ((pred.pixels != 0) && (truth.pixels != 0)).count();
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

BinaryMask boundary(const BinaryMask& mask) {
  BinaryMask out(mask.height, mask.width);
  const Index H = mask.height, W = mask.width;
  for (Index y = 0; y < H; ++y) {
    for (Index x = 0; x < W; ++x) {
      if (!mask(y, x)) continue;
      const bool edge = y == 0 || y == H - 1 || x == 0 || x == W - 1 || !mask(y - 1, x) || !mask(y + 1, x) ||
                        !mask(y, x - 1) || !mask(y, x + 1);
      out.pixels[y * W + x] = edge ? 1 : 0;
    }
  }
  return out;
}

Eigen::ArrayXd squared_distance_transform(const BinaryMask& sites) {
  const Index H = sites.height, W = sites.width;
  Eigen::ArrayXd d(H * W);
  if (sites.empty()) return d.setConstant(std::numeric_limits<double>::infinity());
  std::vector<double> f, out;
  for (Index x = 0; x < W; ++x) {
    f.resize(static_cast<std::size_t>(H));
    out.resize(static_cast<std::size_t>(H));
    for (Index y = 0; y < H; ++y) f[static_cast<std::size_t>(y)] = sites(y, x) ? 0.0 : std::numeric_limits<double>::infinity();
    envelope_1d(f, out);
    for (Index y = 0; y < H; ++y) d[y * W + x] = out[static_cast<std::size_t>(y)];
  }
  for (Index y = 0; y < H; ++y) {
    f.resize(static_cast<std::size_t>(W));
    out.resize(static_cast<std::size_t>(W));
    for (Index x = 0; x < W; ++x) f[static_cast<std::size_t>(x)] = d[y * W + x];
    envelope_1d(f, out);
    for (Index x = 0; x < W; ++x) d[y * W + x] = out[static_cast<std::size_t>(x)];
  }
  return d;
}

double hd95(const BinaryMask& pred, const BinaryMask& truth, const EmptyMaskPolicy& policy) {
  check_extent(pred, truth, "hd95");
  const bool pe = pred.empty(), te = truth.empty();
  if (pe && te) return policy.both_empty_hd95;
  if (pe || te) {
    return policy.diagonal_sentinel
               ? std::hypot(static_cast<double>(pred.height), static_cast<double>(pred.width))
               : policy.one_empty_hd95;
  }
  const BinaryMask bp = boundary(pred), bt = boundary(truth);
  const Eigen::ArrayXd to_truth = squared_distance_transform(bt), to_pred = squared_distance_transform(bp);
  std::vector<double> pooled;
  for (Index i = 0; i < bp.pixels.size(); ++i) {
    if (bp.pixels[i]) pooled.push_back(std::sqrt(to_truth[i]));
    if (bt.pixels[i]) pooled.push_back(std::sqrt(to_pred[i]));
  }
  std::sort(pooled.begin(), pooled.end());
  return percentile_sorted(pooled, 95.0);
}

BinaryMask segment(double gate_probability, const Eigen::ArrayXd& heat, Index height, Index width, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("segment: threshold must lie in [0,1]");
  if (heat.size() != height * width) throw ShapeError("segment: heat map size does not match the extent");
  BinaryMask out(height, width);
  if (gate_probability < 0.5) return out;
  out.pixels = (heat >= threshold).cast<std::uint8_t>();
  return out;
}

ThresholdSearch threshold_search(const std::vector<Eigen::ArrayXd>& heat, const std::vector<BinaryMask>& truth,
                                 double step, const std::vector<double>& gate_probabilities,
                                 const EmptyMaskPolicy& policy) {
  if (heat.empty()) throw ValidationError("threshold_search: empty validation set");
  if (heat.size() != truth.size()) throw ShapeError("threshold_search: heat maps and truths differ in count");
  if (!gate_probabilities.empty() && gate_probabilities.size() != heat.size()) {
    throw ShapeError("threshold_search: gate probabilities differ in count");
  }
  if (!(step > 0.0 && step < 1.0)) throw ValidationError("threshold_search: step must lie in (0,1)");
  ThresholdSearch out;
  for (int k = 1;; ++k) {
    // Rounded to 12 decimals so that e.g. 6 * 0.1 is exactly 0.6.
    const double t = std::round(k * step * 1e12) / 1e12;
    if (t >= 1.0 - 1e-12) break;
    out.candidates.push_back(t);
  }
  double best = -1;
  for (double t : out.candidates) {
    double total = 0;
    for (std::size_t i = 0; i < heat.size(); ++i) {
      const double gp = gate_probabilities.empty() ? 1.0 : gate_probabilities[i];
      total += dice(segment(gp, heat[i], truth[i].height, truth[i].width, t), truth[i], policy);
    }
    const double mean = total / static_cast<double>(heat.size());
    out.mean_dice.push_back(mean);
    if (mean > best) {
      best = mean;
      out.best = t;
    }
  }
  return out;
}

}  // namespace wss
