#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wss/dataio/volume.hpp"

namespace wss {

/// Seeded shuffle of the sorted ids, then largest-remainder proportional split.
/// Fractions must sum to 1 within 1e-9 and at least 3 ids are required.
CohortSplit split_cohorts(std::vector<std::string> ids, const std::array<double, 3>& fractions,
                          std::uint64_t seed);

/// Largest-remainder apportionment of `count` items; ties go to the earlier bucket.
std::vector<std::size_t> largest_remainder(std::size_t count, const std::vector<double>& fractions);

/// Single-consumer shuffled batching. The order depends only on (seed, epoch).
class BatchIterator {
 public:
  BatchIterator(std::size_t count, std::size_t batch_size, std::uint64_t seed, bool drop_last = false);

  std::vector<std::vector<std::size_t>> epoch(std::uint64_t epoch_index) const;
  std::size_t batches_per_epoch() const;

 private:
  std::size_t count_, batch_size_;
  std::uint64_t seed_;
  bool drop_last_;
};

}  // namespace wss
