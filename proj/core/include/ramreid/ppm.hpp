#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace ramreid {

// 8-bit image, pixels interleaved in row-major HWC order as stored in PPM.
struct Image {
  std::size_t channels = 0;  // 1 (P5) or 3 (P6)
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

struct ImageHeader {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

Image read_ppm(const std::filesystem::path& path);
ImageHeader read_ppm_header(const std::filesystem::path& path);
// Binary P6 for 3 channels, P5 for 1; maxval 255.
void write_ppm(const std::filesystem::path& path, const Image& image);

}  // namespace ramreid
