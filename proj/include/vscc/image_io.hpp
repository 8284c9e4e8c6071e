#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vscc {

// 8-bit image, HWC interleaved.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;
  int label = -1;
  std::string path;

  size_t pixel_count() const { return pixels.size(); }
  uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// Binary PPM (P6, maxval 255) reader/writer; throws std::runtime_error
// with the offending path on malformed input.
Image read_ppm(const std::string& path);
void write_ppm(const Image& image, const std::string& path);

// Bilinear resize.
Image resize(const Image& image, int new_h, int new_w);
Image center_crop(const Image& image, int size);

}  // namespace vscc
