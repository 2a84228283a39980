#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wss/dataio/volume.hpp"

namespace wss {

/// `<id>.vol`: "WSSVOL01", u32 C, u32 D, H, W, f32 voxels channel-major.
std::vector<char> encode_volume(const Volume& volume);
/// `<id>.msk`: "WSSMSK01", u32 D, H, W, u8 voxels.
std::vector<char> encode_mask(const MaskArray& mask, Index depth, Index height, Index width);

Volume decode_volume(const std::vector<char>& bytes, const std::string& id, const std::string& origin);
MaskArray decode_mask(const std::vector<char>& bytes, const Volume& volume, const std::string& origin);

/// Writes <dir>/<id>.vol and, when a mask is present, <dir>/<id>.msk.
void write_volume(const std::filesystem::path& dir, const Volume& volume);
/// Reads <dir>/<id>.vol and the mask if <dir>/<id>.msk exists.
Volume read_volume(const std::filesystem::path& dir, const std::string& id);

struct ManifestEntry {
  std::string id;
  std::optional<Cohort> cohort;
};

/// One id per line with an optional `train|val|test` column; '#' starts a comment.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
CohortSplit split_from_manifest(const std::vector<ManifestEntry>& entries);

/// Preprocessed slice set: "WSSSLC01", u32 count, then per slice u32 id length, volume id,
/// u32 slice index, u32 C, u32 size, u8 label, u8 has_mask, f32 image, u8 mask.
std::vector<char> encode_slices(const std::vector<SliceSample>& slices);
std::vector<SliceSample> decode_slices(const std::vector<char>& bytes, const std::string& origin);
void write_slices(const std::filesystem::path& path, const std::vector<SliceSample>& slices);
std::vector<SliceSample> read_slices(const std::filesystem::path& path);

}  // namespace wss
