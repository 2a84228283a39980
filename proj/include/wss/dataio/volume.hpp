#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wss/numerics/tensor.hpp"

namespace wss {

using MaskArray = Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>;

/// Multi-channel MRI volume, channel-major C x D x H x W (D is the axial axis).
struct Volume {
  std::string id;
  Index channels = 0, depth = 0, height = 0, width = 0;
  Eigen::ArrayXf data;
  /// D x H x W, 1 = tumor. Evaluation only.
  std::optional<MaskArray> mask;

  Index voxels() const { return depth * height * width; }
  float& at(Index c, Index z, Index y, Index x) { return data[((c * depth + z) * height + y) * width + x]; }
  float at(Index c, Index z, Index y, Index x) const { return data[((c * depth + z) * height + y) * width + x]; }

  /// Throws ValidationError if data/mask sizes disagree with the extents.
  void validate() const;
};

/// One preprocessed axial slice x_k: channels x size x size, values in [0,1].
struct SliceSample {
  std::string volume_id;
  int slice_index = 0;
  Index channels = 0, size = 0;
  Eigen::ArrayXf image;
  int label = 0;
  std::optional<MaskArray> truth_mask;

  /// "<volume>_s<index>" with a zero-padded 3-digit index.
  std::string id() const;
  Index pixels() const { return size * size; }
};

enum class Cohort { Train, Validation, Test };

const char* cohort_name(Cohort c);
Cohort parse_cohort(const std::string& s);

struct CohortSplit {
  std::vector<std::string> train, validation, test;
  std::uint64_t split_seed = 0;

  const std::vector<std::string>& ids(Cohort c) const;
  std::optional<Cohort> cohort_of(const std::string& id) const;
};

/// Stacks the selected slices into an [n, C, size, size] tensor.
template <typename S>
Tensor<S> stack_images(const std::vector<SliceSample>& slices, const std::vector<std::size_t>& indices);

}  // namespace wss
