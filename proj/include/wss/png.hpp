#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace wss {

/// 8-bit RGB, row-major, 3 bytes per pixel.
void write_png_rgb(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb);
/// 8-bit grayscale, row-major.
void write_png_gray(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& gray);

/// 16-bit grayscale, row-major; written big-endian as PNG requires.
void write_png_gray16(const std::filesystem::path& path, int width, int height, const std::vector<std::uint16_t>& gray);

}  // namespace wss
