#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace wss {

/// Little-endian byte sink used by every binary format in the toolkit.
struct ByteWriter {
  std::vector<char> bytes;

  void raw(const void* data, std::size_t n);
  void u8(std::uint8_t v) { bytes.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void f32(float v);
};

/// Bounds-checked little-endian reader; truncation raises ValidationError naming the origin.
class ByteReader {
 public:
  ByteReader(const std::vector<char>& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  void expect_magic(const char (&magic)[8]);
  std::uint8_t u8();
  std::uint32_t u32();
  float f32();
  std::string string(std::size_t n);
  const char* take(std::size_t n);
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<char>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never see partial files.
void write_file(const std::filesystem::path& path, const std::vector<char>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace wss
