#pragma once

#include <png.h>

#include <cstdint>
#include <string>
#include <vector>

#include "cemcd/errors.hpp"
#include "cemcd/tensor.hpp"

namespace cemcd {

// 8-bit PNG image in interleaved row-major order (RGB: 3 bytes per pixel).
struct PngImage {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;
};

inline PngImage read_png(const std::string& path, int want_channels) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("cannot read PNG '" + path + "': " + img.message);
  img.format = want_channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  PngImage out;
  out.height = static_cast<int>(img.height);
  out.width = static_cast<int>(img.width);
  out.channels = want_channels;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG '" + path + "': " + img.message);
  }
  return out;
}

inline void write_png(const std::string& path, const PngImage& src) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(src.width);
  img.height = static_cast<png_uint_32>(src.height);
  img.format = src.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, src.pixels.data(), 0, nullptr))
    throw IoError("cannot write PNG '" + path + "': " + img.message);
}

// [C,H,W] float in [0,1] -> interleaved 8-bit (value = round(255 * v)).
template <typename S>
PngImage to_png8(const Tensor<S>& t) {
  PngImage out;
  if (t.rank() == 3) {
    out.channels = t.dim(0);
    out.height = t.dim(1);
    out.width = t.dim(2);
  } else if (t.rank() == 2) {
    out.channels = 1;
    out.height = t.dim(0);
    out.width = t.dim(1);
  } else {
    throw ShapeError("to_png8 expects rank 2 or 3, got " + t.shape_str());
  }
  out.pixels.resize(static_cast<std::size_t>(out.height) * out.width * out.channels);
  const std::size_t plane = static_cast<std::size_t>(out.height) * out.width;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < out.channels; ++c) {
      const double v = static_cast<double>(t[static_cast<std::size_t>(c) * plane + p]);
      const double clamped = std::min(1.0, std::max(0.0, v));
      out.pixels[p * out.channels + c] = static_cast<std::uint8_t>(std::lround(255.0 * clamped));
    }
  return out;
}

// Interleaved 8-bit -> planar [C,H,W] float in [0,1].
template <typename S>
Tensor<S> from_png8(const PngImage& img) {
  Tensor<S> t(img.channels == 1 ? std::vector<int>{img.height, img.width}
                                : std::vector<int>{img.channels, img.height, img.width});
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < img.channels; ++c)
      t[static_cast<std::size_t>(c) * plane + p] =
          static_cast<S>(img.pixels[p * img.channels + c]) / S(255);
  return t;
}

}  // namespace cemcd
