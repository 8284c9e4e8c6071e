#include "vscc/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace vscc {

namespace {
// Skips whitespace and '#' comment lines between PPM header tokens.
int read_header_int(std::istream& in, const std::string& path) {
  int c = in.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int value = -1;
  in >> value;
  if (!in || value < 0) throw std::runtime_error("read_ppm: malformed header in " + path);
  return value;
}
}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: " + path + " is not a P6 PPM");
  Image img;
  img.width = read_header_int(f, path);
  img.height = read_header_int(f, path);
  const int maxval = read_header_int(f, path);
  if (maxval != 255) throw std::runtime_error("read_ppm: " + path + " maxval must be 255");
  f.get();  // single whitespace after maxval
  img.channels = 3;
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * 3);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  img.path = path;
  return img;
}

void write_ppm(const Image& image, const std::string& path) {
  if (image.channels != 3) throw std::invalid_argument("write_ppm: need 3 channels");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << image.width << " " << image.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(image.pixels.data()),
          static_cast<std::streamsize>(image.pixels.size()));
  if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

Image resize(const Image& image, int new_h, int new_w) {
  Image out;
  out.height = new_h;
  out.width = new_w;
  out.channels = image.channels;
  out.label = image.label;
  out.path = image.path;
  out.pixels.resize(static_cast<size_t>(new_h) * new_w * image.channels);
  const double sy = static_cast<double>(image.height) / new_h;
  const double sx = static_cast<double>(image.width) / new_w;
  for (int y = 0; y < new_h; ++y) {
    const double fy = std::min((y + 0.5) * sy - 0.5, image.height - 1.0);
    const int y0 = std::max(0, static_cast<int>(std::floor(fy)));
    const int y1 = std::min(image.height - 1, y0 + 1);
    const double wy = std::max(0.0, fy - y0);
    for (int x = 0; x < new_w; ++x) {
      const double fx = std::min((x + 0.5) * sx - 0.5, image.width - 1.0);
      const int x0 = std::max(0, static_cast<int>(std::floor(fx)));
      const int x1 = std::min(image.width - 1, x0 + 1);
      const double wx = std::max(0.0, fx - x0);
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        const double bot = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<uint8_t>(std::lround(top * (1 - wy) + bot * wy));
      }
    }
  }
  return out;
}

Image center_crop(const Image& image, int size) {
  if (image.height < size || image.width < size)
    throw std::invalid_argument("center_crop: image smaller than crop size");
  Image out;
  out.height = size;
  out.width = size;
  out.channels = image.channels;
  out.label = image.label;
  out.path = image.path;
  out.pixels.resize(static_cast<size_t>(size) * size * image.channels);
  const int oy = (image.height - size) / 2;
  const int ox = (image.width - size) / 2;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(y + oy, x + ox, c);
  return out;
}

}  // namespace vscc
