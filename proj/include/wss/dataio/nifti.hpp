#pragma once

#include <filesystem>
#include <string>

#include "wss/dataio/volume.hpp"

namespace wss {

struct NiftiImage {
  Index nx = 0, ny = 0, nz = 0;
  /// x fastest, scaled by scl_slope/scl_inter when the slope is nonzero.
  Eigen::ArrayXf data;
};

/// Reads a single-file NIfTI-1 image (.nii or .nii.gz) with 3 spatial dimensions.
NiftiImage read_nifti(const std::filesystem::path& path);

/// Imports a BraTS-style case directory holding <id>_{t1,t1ce,t2,flair}[.nii|.nii.gz] and an
/// optional <id>_seg. Any nonzero segmentation label becomes tumor.
Volume import_brats_case(const std::filesystem::path& dir, const std::string& id);

}  // namespace wss
