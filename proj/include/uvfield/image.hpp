#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace uvfield {

/// 8-bit RGB image, row-major with row 0 at the top.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 3 * width * height

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(3) * w * h, 0) {}

  std::uint8_t* at(int x, int y) { return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* at(int x, int y) const { return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
};

/// PNG in any bit depth/colour type, converted to 8-bit RGB. Throws IoError.
Image read_png(const std::string& path);
void write_png(const Image& image, const std::string& path);

/// Bilinear sample at texture coordinate (u, v) with v pointing up, clamped at the edges.
/// Returns linear channel values in [0, 1].
void sample_bilinear(const Image& image, double u, double v, double rgb[3]);

}  // namespace uvfield
