#include "wss/bench/felzenszwalb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wss/error.hpp"

namespace wss {

namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  /// Returns the surviving root.
  std::size_t join(std::size_t a, std::size_t b) {
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return a;
  }
  std::size_t size(std::size_t root) const { return size_[root]; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

struct Edge {
  float w;
  std::uint32_t a, b;
};

Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

}  // namespace

Eigen::ArrayXf gaussian_blur(const Eigen::ArrayXf& image, Index height, Index width, double sigma) {
  if (image.size() != height * width) throw ShapeError("gaussian_blur: size does not match the extent");
  if (sigma <= 0) return image;
  const Index r = static_cast<Index>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double total = 0;
  for (Index i = -r; i <= r; ++i) total += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  for (double& v : k) v /= total;

  Eigen::ArrayXf tmp(image.size()), out(image.size());
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      double acc = 0;
      for (Index i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * image[y * width + reflect(x + i, width)];
      tmp[y * width + x] = static_cast<float>(acc);
    }
  }
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      double acc = 0;
      for (Index i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * tmp[reflect(y + i, height) * width + x];
      out[y * width + x] = static_cast<float>(acc);
    }
  }
  return out;
}

std::vector<int> felzenszwalb_segment(const Eigen::ArrayXf& image, Index height, Index width,
                                      const FelzenszwalbConfig& config) {
  if (height <= 0 || width <= 0 || image.size() != height * width) throw ShapeError("felzenszwalb: size does not match the extent");
  if (!image.allFinite()) throw NumericError("felzenszwalb: image contains non-finite values");
  if (!(config.scale > 0) || config.sigma < 0 || config.min_size < 0 || !(config.intensity_range > 0)) {
    throw ValidationError("felzenszwalb: invalid parameters");
  }
  const Eigen::ArrayXf smooth = gaussian_blur(image, height, width, config.sigma);
  const double k = config.scale / 255.0 * config.intensity_range;

  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(4 * height * width));
  auto add = [&](Index y0, Index x0, Index y1, Index x1) {
    const Index a = y0 * width + x0, b = y1 * width + x1;
    edges.push_back({std::abs(smooth[a] - smooth[b]), static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)});
  };
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      if (x + 1 < width) add(y, x, y, x + 1);
      if (y + 1 < height) add(y, x, y + 1, x);
      if (x + 1 < width && y + 1 < height) add(y, x, y + 1, x + 1);
      if (x + 1 < width && y > 0) add(y, x, y - 1, x + 1);
    }
  }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.w < b.w; });

  const auto n = static_cast<std::size_t>(height * width);
  DisjointSets sets(n);
  std::vector<double> threshold(n, k);
  for (const Edge& e : edges) {
    std::size_t a = sets.find(e.a), b = sets.find(e.b);
    if (a == b) continue;
    if (e.w <= threshold[a] && e.w <= threshold[b]) {
      const std::size_t root = sets.join(a, b);
      threshold[root] = e.w + k / static_cast<double>(sets.size(root));
    }
  }
  for (const Edge& e : edges) {
    std::size_t a = sets.find(e.a), b = sets.find(e.b);
    if (a != b && (sets.size(a) < static_cast<std::size_t>(config.min_size) ||
                   sets.size(b) < static_cast<std::size_t>(config.min_size))) {
      sets.join(a, b);
    }
  }
  std::vector<int> root_label(n, -1), labels(n);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = sets.find(i);
    if (root_label[r] < 0) root_label[r] = next++;
    labels[i] = root_label[r];
  }
  return labels;
}

}  // namespace wss
