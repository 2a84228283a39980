#include "wss/binary_io.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "wss/error.hpp"

namespace wss {

void ByteWriter::raw(const void* data, std::size_t n) {
  const char* p = static_cast<const char*>(data);
  bytes.insert(bytes.end(), p, p + n);
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void ByteWriter::f32(float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  u32(bits);
}

const char* ByteReader::take(std::size_t n) {
  if (n > remaining()) throw ValidationError(origin_ + ": truncated (needed " + std::to_string(n) + " more bytes)");
  const char* p = bytes_.data() + pos_;
  pos_ += n;
  return p;
}

void ByteReader::expect_magic(const char (&magic)[8]) {
  const char* p = take(8);
  if (std::memcmp(p, magic, 8) != 0) {
    throw ValidationError(origin_ + ": bad magic, expected " + std::string(magic, 8));
  }
}

std::uint8_t ByteReader::u8() { return static_cast<std::uint8_t>(*take(1)); }

std::uint32_t ByteReader::u32() {
  const auto* p = reinterpret_cast<const unsigned char*>(take(4));
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float ByteReader::f32() {
  const std::uint32_t bits = u32();
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::string ByteReader::string(std::size_t n) { return std::string(take(n), n); }

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::vector<char>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace wss
