#include "wss/dataio/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wss/error.hpp"
#include "wss/numerics/random.hpp"

namespace wss {

std::vector<std::size_t> largest_remainder(std::size_t count, const std::vector<double>& fractions) {
  std::vector<std::size_t> sizes(fractions.size());
  std::vector<double> rem(fractions.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double q = fractions[i] * static_cast<double>(count);
    sizes[i] = static_cast<std::size_t>(std::floor(q + 1e-9));
    rem[i] = q - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::vector<std::size_t> order(fractions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < count; ++k, ++assigned) ++sizes[order[k % order.size()]];
  return sizes;
}

CohortSplit split_cohorts(std::vector<std::string> ids, const std::array<double, 3>& fractions,
                          std::uint64_t seed) {
  if (ids.size() < 3) throw ValidationError("split_cohorts: need at least 3 volumes, got " + std::to_string(ids.size()));
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ValidationError("split_cohorts: negative fraction");
  }
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("split_cohorts: fractions sum to " + std::to_string(total) + ", expected 1");
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw ValidationError("split_cohorts: duplicate volume id");
  }
  Rng rng(seed);
  shuffle(ids.begin(), ids.end(), rng);
  const auto sizes = largest_remainder(ids.size(), {fractions.begin(), fractions.end()});
  CohortSplit split;
  split.split_seed = seed;
  auto it = ids.begin();
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  it += static_cast<std::ptrdiff_t>(sizes[0]);
  split.validation.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
  it += static_cast<std::ptrdiff_t>(sizes[1]);
  split.test.assign(it, ids.end());
  return split;
}

BatchIterator::BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t seed, bool drop_last)
    : count_(count), batch_size_(batch_size), seed_(seed), drop_last_(drop_last) {
  if (batch_size == 0) throw ValidationError("batch size must be positive");
}

std::size_t BatchIterator::batches_per_epoch() const {
  return drop_last_ ? count_ / batch_size_ : (count_ + batch_size_ - 1) / batch_size_;
}

std::vector<std::vector<std::size_t>> BatchIterator::epoch(std::uint64_t epoch_index) const {
  std::vector<std::size_t> order(count_);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed_, epoch_index));
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < batches_per_epoch(); ++b) {
    const std::size_t first = b * batch_size_, last = std::min(count_, first + batch_size_);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(first),
                         order.begin() + static_cast<std::ptrdiff_t>(last));
  }
  return batches;
}

}  // namespace wss
