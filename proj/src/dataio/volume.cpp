#include "wss/dataio/volume.hpp"

#include <algorithm>
#include <cstdio>

#include "wss/error.hpp"

namespace wss {

void Volume::validate() const {
  if (channels <= 0 || depth <= 0 || height <= 0 || width <= 0) {
    throw ValidationError("volume " + id + ": non-positive extents");
  }
  if (data.size() != channels * voxels()) {
    throw ValidationError("volume " + id + ": " + std::to_string(data.size()) +
                          " voxels do not match extents " +
                          shape_str({channels, depth, height, width}));
  }
  if (mask && mask->size() != voxels()) {
    throw ValidationError("volume " + id + ": mask has " + std::to_string(mask->size()) +
                          " voxels, expected " + shape_str({depth, height, width}));
  }
}

std::string SliceSample::id() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_s%03d", slice_index);
  return volume_id + buf;
}

const char* cohort_name(Cohort c) {
  switch (c) {
    case Cohort::Train: return "train";
    case Cohort::Validation: return "val";
    case Cohort::Test: return "test";
  }
  return "?";
}

Cohort parse_cohort(const std::string& s) {
  if (s == "train") return Cohort::Train;
  if (s == "val" || s == "validation") return Cohort::Validation;
  if (s == "test") return Cohort::Test;
  throw ValidationError("unknown cohort '" + s + "' (expected train|val|test)");
}

const std::vector<std::string>& CohortSplit::ids(Cohort c) const {
  switch (c) {
    case Cohort::Train: return train;
    case Cohort::Validation: return validation;
    case Cohort::Test: return test;
  }
  return train;
}

std::optional<Cohort> CohortSplit::cohort_of(const std::string& id) const {
  for (Cohort c : {Cohort::Train, Cohort::Validation, Cohort::Test}) {
    const auto& v = ids(c);
    if (std::find(v.begin(), v.end(), id) != v.end()) return c;
  }
  return std::nullopt;
}

template <typename S>
Tensor<S> stack_images(const std::vector<SliceSample>& slices, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ShapeError("stack_images: no slices selected");
  const SliceSample& first = slices.at(indices.front());
  const Index per = first.channels * first.pixels();
  typename Tensor<S>::Array out(per * static_cast<Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const SliceSample& s = slices.at(indices[i]);
    if (s.channels != first.channels || s.size != first.size) {
      throw ShapeError("stack_images: slice " + s.id() + " has extents differing from " + first.id());
    }
    out.segment(static_cast<Index>(i) * per, per) = s.image.template cast<S>();
  }
  return Tensor<S>({static_cast<Index>(indices.size()), first.channels, first.size, first.size},
                   std::move(out));
}

template Tensor<float> stack_images<float>(const std::vector<SliceSample>&, const std::vector<std::size_t>&);
template Tensor<double> stack_images<double>(const std::vector<SliceSample>&, const std::vector<std::size_t>&);

}  // namespace wss
