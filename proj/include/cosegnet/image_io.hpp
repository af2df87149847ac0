#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "cosegnet/error.hpp"
#include "cosegnet/tensor.hpp"

namespace coseg::io {

struct Image8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;
};

inline Image8 read_png(const std::string& path, std::size_t channels) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG " + path + ": " + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out;
  out.height = img.height;
  out.width = img.width;
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path + ": " + msg);
  }
  return out;
}

inline void write_png(const std::string& path, const Image8& image) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path + ": " + img.message);
  }
}

inline std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::lround(c));
}

// H x W x 3 tensor with values in [0,1].
inline Tensor to_tensor_rgb(const Image8& img) {
  Tensor t(Shape{img.height, img.width, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = img.pixels[i] / 255.0;
  return t;
}

// H x W (or H x W x 1) tensor in [0,1] to an 8-bit grayscale image.
inline Image8 from_tensor_gray(const Tensor& t) {
  Image8 img{t.dim(0), t.dim(1), 1, {}};
  img.pixels.resize(img.height * img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = to_byte(t[i]);
  return img;
}

inline Image8 from_tensor_rgb(const Tensor& t) {
  Image8 img{t.dim(0), t.dim(1), 3, {}};
  img.pixels.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) img.pixels[i] = to_byte(t[i]);
  return img;
}

}  // namespace coseg::io
