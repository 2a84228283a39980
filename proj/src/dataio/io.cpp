#include "wss/dataio/io.hpp"

#include <sstream>

#include "wss/binary_io.hpp"
#include "wss/error.hpp"

namespace wss {

namespace {

constexpr char kVolMagic[8] = {'W', 'S', 'S', 'V', 'O', 'L', '0', '1'};
constexpr char kMskMagic[8] = {'W', 'S', 'S', 'M', 'S', 'K', '0', '1'};
constexpr char kSlcMagic[8] = {'W', 'S', 'S', 'S', 'L', 'C', '0', '1'};

std::uint32_t extent_u32(Index e) { return static_cast<std::uint32_t>(e); }

void require_payload(ByteReader& r, std::size_t count, std::size_t width, const std::string& origin) {
  if (count > r.remaining() / width) {
    throw ValidationError(origin + ": truncated payload (" + std::to_string(count) + " elements declared)");
  }
}

}  // namespace

std::vector<char> encode_volume(const Volume& v) {
  v.validate();
  ByteWriter w;
  w.raw(kVolMagic, 8);
  w.u32(extent_u32(v.channels));
  w.u32(extent_u32(v.depth));
  w.u32(extent_u32(v.height));
  w.u32(extent_u32(v.width));
  for (Index i = 0; i < v.data.size(); ++i) w.f32(v.data[i]);
  return std::move(w.bytes);
}

std::vector<char> encode_mask(const MaskArray& mask, Index depth, Index height, Index width) {
  if (mask.size() != depth * height * width) throw ShapeError("encode_mask: size does not match extents");
  ByteWriter w;
  w.raw(kMskMagic, 8);
  w.u32(extent_u32(depth));
  w.u32(extent_u32(height));
  w.u32(extent_u32(width));
  w.raw(mask.data(), static_cast<std::size_t>(mask.size()));
  return std::move(w.bytes);
}

Volume decode_volume(const std::vector<char>& bytes, const std::string& id, const std::string& origin) {
  ByteReader r(bytes, origin);
  r.expect_magic(kVolMagic);
  Volume v;
  v.id = id;
  v.channels = r.u32();
  v.depth = r.u32();
  v.height = r.u32();
  v.width = r.u32();
  const auto n = static_cast<std::size_t>(v.channels * v.voxels());
  require_payload(r, n, 4, origin);
  v.data.resize(static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) v.data[static_cast<Index>(i)] = r.f32();
  if (!r.at_end()) throw ValidationError(origin + ": trailing bytes after voxel data");
  v.validate();
  return v;
}

MaskArray decode_mask(const std::vector<char>& bytes, const Volume& v, const std::string& origin) {
  ByteReader r(bytes, origin);
  r.expect_magic(kMskMagic);
  const Index d = r.u32(), h = r.u32(), w = r.u32();
  if (d != v.depth || h != v.height || w != v.width) {
    throw ValidationError(origin + ": mask extents " + shape_str({d, h, w}) + " differ from volume " +
                          shape_str({v.depth, v.height, v.width}));
  }
  const auto n = static_cast<std::size_t>(d * h * w);
  require_payload(r, n, 1, origin);
  MaskArray m(static_cast<Index>(n));
  const char* p = r.take(n);
  for (std::size_t i = 0; i < n; ++i) m[static_cast<Index>(i)] = p[i] != 0 ? 1 : 0;
  if (!r.at_end()) throw ValidationError(origin + ": trailing bytes after mask data");
  return m;
}

void write_volume(const std::filesystem::path& dir, const Volume& v) {
  write_file(dir / (v.id + ".vol"), encode_volume(v));
  if (v.mask) write_file(dir / (v.id + ".msk"), encode_mask(*v.mask, v.depth, v.height, v.width));
}

Volume read_volume(const std::filesystem::path& dir, const std::string& id) {
  const auto vol_path = dir / (id + ".vol");
  Volume v = decode_volume(read_file(vol_path), id, vol_path.string());
  const auto msk_path = dir / (id + ".msk");
  if (std::filesystem::exists(msk_path)) v.mask = decode_mask(read_file(msk_path), v, msk_path.string());
  return v;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    ManifestEntry e;
    std::string flag, extra;
    if (!(fields >> e.id)) continue;
    if (fields >> flag) {
      try {
        e.cohort = parse_cohort(flag);
      } catch (const ValidationError& err) {
        throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + err.what());
      }
    }
    if (fields >> extra) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": unexpected column");
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::string text;
  for (const auto& e : entries) {
    text += e.id;
    if (e.cohort) text += std::string("\t") + cohort_name(*e.cohort);
    text += '\n';
  }
  write_text(path, text);
}

CohortSplit split_from_manifest(const std::vector<ManifestEntry>& entries) {
  CohortSplit split;
  for (const auto& e : entries) {
    if (!e.cohort) throw ValidationError("manifest entry " + e.id + " has no cohort flag");
    switch (*e.cohort) {
      case Cohort::Train: split.train.push_back(e.id); break;
      case Cohort::Validation: split.validation.push_back(e.id); break;
      case Cohort::Test: split.test.push_back(e.id); break;
    }
  }
  return split;
}

std::vector<char> encode_slices(const std::vector<SliceSample>& slices) {
  ByteWriter w;
  w.raw(kSlcMagic, 8);
  w.u32(static_cast<std::uint32_t>(slices.size()));
  for (const auto& s : slices) {
    if (s.image.size() != s.channels * s.pixels()) throw ShapeError("encode_slices: image size mismatch in " + s.id());
    w.u32(static_cast<std::uint32_t>(s.volume_id.size()));
    w.raw(s.volume_id.data(), s.volume_id.size());
    w.u32(static_cast<std::uint32_t>(s.slice_index));
    w.u32(extent_u32(s.channels));
    w.u32(extent_u32(s.size));
    w.u8(static_cast<std::uint8_t>(s.label));
    w.u8(s.truth_mask ? 1 : 0);
    for (Index i = 0; i < s.image.size(); ++i) w.f32(s.image[i]);
    if (s.truth_mask) w.raw(s.truth_mask->data(), static_cast<std::size_t>(s.truth_mask->size()));
  }
  return std::move(w.bytes);
}

std::vector<SliceSample> decode_slices(const std::vector<char>& bytes, const std::string& origin) {
  ByteReader r(bytes, origin);
  r.expect_magic(kSlcMagic);
  const std::uint32_t count = r.u32();
  std::vector<SliceSample> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    SliceSample s;
    s.volume_id = r.string(r.u32());
    s.slice_index = static_cast<int>(r.u32());
    s.channels = r.u32();
    s.size = r.u32();
    s.label = r.u8();
    const bool has_mask = r.u8() != 0;
    if (s.label > 1) throw ValidationError(origin + ": label out of range in " + s.id());
    const auto n = static_cast<std::size_t>(s.channels * s.pixels());
    require_payload(r, n, 4, origin);
    s.image.resize(static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) s.image[static_cast<Index>(i)] = r.f32();
    if (has_mask) {
      const auto m = static_cast<std::size_t>(s.pixels());
      const char* p = r.take(m);
      s.truth_mask = MaskArray(s.pixels());
      for (std::size_t i = 0; i < m; ++i) (*s.truth_mask)[static_cast<Index>(i)] = p[i] != 0 ? 1 : 0;
    }
    out.push_back(std::move(s));
  }
  if (!r.at_end()) throw ValidationError(origin + ": trailing bytes after slice records");
  return out;
}

void write_slices(const std::filesystem::path& path, const std::vector<SliceSample>& slices) {
  write_file(path, encode_slices(slices));
}

std::vector<SliceSample> read_slices(const std::filesystem::path& path) {
  return decode_slices(read_file(path), path.string());
}

}  // namespace wss
