#include "uvfield/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "uvfield/errors.hpp"

namespace uvfield {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("cannot read image " + path + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode image " + path + ": " + img.message);
  }
  return out;
}

void write_png(const Image& image, const std::string& path) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(3) * image.width * image.height)
    throw ContractViolation("write_png: malformed image");
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write image: " + path);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_stdio(&img, file.get(), 0, image.pixels.data(), 0, nullptr))
    throw IoError("cannot encode image " + path + ": " + img.message);
  if (std::fflush(file.get()) != 0) throw IoError("failed writing image: " + path);
}

void sample_bilinear(const Image& image, double u, double v, double rgb[3]) {
  if (image.width <= 0 || image.height <= 0) throw ContractViolation("sample_bilinear: empty image");
  // Texel centers at ((x + 0.5) / w, 1 - (y + 0.5) / h).
  const double fx = std::clamp(u * image.width - 0.5, 0.0, image.width - 1.0);
  const double fy = std::clamp((1.0 - v) * image.height - 0.5, 0.0, image.height - 1.0);
  const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  const int x1 = std::min(x0 + 1, image.width - 1), y1 = std::min(y0 + 1, image.height - 1);
  const double ax = fx - x0, ay = fy - y0;
  for (int c = 0; c < 3; ++c) {
    const double top = (1 - ax) * image.at(x0, y0)[c] + ax * image.at(x1, y0)[c];
    const double bottom = (1 - ax) * image.at(x0, y1)[c] + ax * image.at(x1, y1)[c];
    rgb[c] = ((1 - ay) * top + ay * bottom) / 255.0;
  }
}

}  // namespace uvfield
