#include "wss/dataio/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <memory>
#include <vector>

#include "wss/error.hpp"

namespace wss {

namespace {

constexpr std::size_t kHeaderBytes = 348;

std::vector<unsigned char> gunzip_file(const std::filesystem::path& path) {
  // gzread passes uncompressed files through unchanged.
  std::unique_ptr<gzFile_s, int (*)(gzFile)> f(gzopen(path.string().c_str(), "rb"), gzclose);
  if (!f) throw ValidationError("cannot open " + path.string());
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  for (;;) {
    const int n = gzread(f.get(), buf, sizeof buf);
    if (n < 0) throw ValidationError(path.string() + ": decompression failed");
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  return out;
}

struct Field {
  const unsigned char* base;
  bool swap;

  template <typename T>
  T get(std::size_t offset) const {
    unsigned char b[sizeof(T)];
    std::memcpy(b, base + offset, sizeof(T));
    if (swap) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
};

}  // namespace

NiftiImage read_nifti(const std::filesystem::path& path) {
  const auto bytes = gunzip_file(path);
  const std::string origin = path.string();
  if (bytes.size() < kHeaderBytes) throw ValidationError(origin + ": shorter than a NIfTI-1 header");
  Field h{bytes.data(), false};
  if (h.get<std::int32_t>(0) != 348) {
    h.swap = true;
    if (h.get<std::int32_t>(0) != 348) throw ValidationError(origin + ": not a NIfTI-1 file (sizeof_hdr)");
  }
  if (std::memcmp(bytes.data() + 344, "n+1", 4) != 0) {
    throw ValidationError(origin + ": only single-file NIfTI-1 (magic n+1) is supported");
  }
  const int ndim = h.get<std::int16_t>(40);
  if (ndim < 3 || ndim > 7) throw ValidationError(origin + ": expected 3 spatial dimensions, got " + std::to_string(ndim));
  for (int k = 4; k <= ndim; ++k) {
    if (h.get<std::int16_t>(40 + 2 * k) > 1) throw ValidationError(origin + ": 4D and higher images are not supported");
  }
  NiftiImage img;
  img.nx = h.get<std::int16_t>(42);
  img.ny = h.get<std::int16_t>(44);
  img.nz = h.get<std::int16_t>(46);
  if (img.nx <= 0 || img.ny <= 0 || img.nz <= 0) throw ValidationError(origin + ": non-positive dimension");
  const int datatype = h.get<std::int16_t>(70);
  const auto offset = static_cast<std::size_t>(h.get<float>(108));
  const float slope = h.get<float>(112), inter = h.get<float>(116);

  std::size_t width = 0;
  switch (datatype) {
    case 2: case 256: width = 1; break;
    case 4: case 512: width = 2; break;
    case 8: case 16: case 768: width = 4; break;
    case 64: width = 8; break;
    default: throw ValidationError(origin + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }
  const auto n = static_cast<std::size_t>(img.nx * img.ny * img.nz);
  if (offset < kHeaderBytes || bytes.size() < offset + n * width) throw ValidationError(origin + ": truncated voxel data");
  Field d{bytes.data() + offset, h.swap};
  img.data.resize(static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0;
    const std::size_t o = i * width;
    switch (datatype) {
      case 2: v = d.get<std::uint8_t>(o); break;
      case 256: v = d.get<std::int8_t>(o); break;
      case 4: v = d.get<std::int16_t>(o); break;
      case 512: v = d.get<std::uint16_t>(o); break;
      case 8: v = d.get<std::int32_t>(o); break;
      case 768: v = d.get<std::uint32_t>(o); break;
      case 16: v = d.get<float>(o); break;
      case 64: v = d.get<double>(o); break;
    }
    if (slope != 0.0f) v = v * slope + inter;
    img.data[static_cast<Index>(i)] = static_cast<float>(v);
  }
  return img;
}

namespace {

std::filesystem::path find_modality(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    auto p = dir / (stem + ext);
    if (std::filesystem::exists(p)) return p;
  }
  return {};
}

}  // namespace

Volume import_brats_case(const std::filesystem::path& dir, const std::string& id) {
  Volume v;
  v.id = id;
  v.channels = 4;
  std::vector<NiftiImage> channels;
  for (const char* mod : {"t1", "t1ce", "t2", "flair"}) {
    const auto p = find_modality(dir, id + "_" + mod);
    if (p.empty()) throw ValidationError("case " + id + ": missing modality " + mod + " in " + dir.string());
    channels.push_back(read_nifti(p));
    const auto& c = channels.back();
    if (c.nx != channels.front().nx || c.ny != channels.front().ny || c.nz != channels.front().nz) {
      throw ValidationError("case " + id + ": modality " + mod + " has different extents");
    }
  }
  // NIfTI stores x fastest, which is exactly the z-major D x H x W layout with D = z.
  v.depth = channels[0].nz;
  v.height = channels[0].ny;
  v.width = channels[0].nx;
  v.data.resize(4 * v.voxels());
  for (int c = 0; c < 4; ++c) v.data.segment(c * v.voxels(), v.voxels()) = channels[c].data;
  if (const auto seg = find_modality(dir, id + "_seg"); !seg.empty()) {
    const NiftiImage s = read_nifti(seg);
    if (s.nx != v.width || s.ny != v.height || s.nz != v.depth) {
      throw ValidationError("case " + id + ": segmentation extents differ from the images");
    }
    v.mask = (s.data != 0.0f).cast<std::uint8_t>();
  }
  v.validate();
  return v;
}

}  // namespace wss
