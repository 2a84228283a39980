#include "wss/png.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "wss/error.hpp"

namespace wss {

namespace {

void write_png(const std::filesystem::path& path, int width, int height, int color_type, int channels,
               const std::vector<std::uint8_t>& pixels, int bit_depth = 8) {
  if (pixels.size() != static_cast<std::size_t>(width) * height * channels * (bit_depth / 8)) {
    throw ShapeError("png: pixel buffer does not match " + std::to_string(width) + "x" + std::to_string(height));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), std::fclose);
  if (!fp) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png: allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width * channels * (bit_depth / 8)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
  write_png(path, width, height, PNG_COLOR_TYPE_RGB, 3, rgb);
}

void write_png_gray(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& gray) {
  write_png(path, width, height, PNG_COLOR_TYPE_GRAY, 1, gray);
}

void write_png_gray16(const std::filesystem::path& path, int width, int height, const std::vector<std::uint16_t>& gray) {
  std::vector<std::uint8_t> bytes(gray.size() * 2);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(gray[i] >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(gray[i] & 0xFF);
  }
  write_png(path, width, height, PNG_COLOR_TYPE_GRAY, 1, bytes, 16);
}

}  // namespace wss
