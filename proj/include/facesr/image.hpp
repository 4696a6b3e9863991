#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "facesr/tensor.hpp"

namespace facesr {

// Intensity image with values in [0, 1], stored planar ([c][y][x]) so it maps
// directly onto the (C, H, W) tensor layout. Masks are single-channel with
// values in {0, 1}.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, 0.0) {
    if (h <= 0 || w <= 0 || (c != 1 && c != 3))
      throw std::invalid_argument("image: bad dimensions (channels must be 1 or 3)");
  }

  static Image constant(int h, int w, int c, double value) {
    Image img(h, w, c);
    std::fill(img.data.begin(), img.data.end(), value);
    return img;
  }

  double& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }

  size_t pixels() const { return static_cast<size_t>(height) * width; }
  bool same_dims(const Image& o) const { return height == o.height && width == o.width && channels == o.channels; }

  bool in_range() const {
    for (double v : data)
      if (!(v >= 0.0 && v <= 1.0)) return false;
    return true;
  }

  bool is_binary_mask() const {
    if (channels != 1) return false;
    for (double v : data)
      if (v != 0.0 && v != 1.0) return false;
    return true;
  }

  void clamp01() {
    for (double& v : data) v = std::clamp(v, 0.0, 1.0);
  }

  Tensor to_tensor() const { return Tensor({channels, height, width}, data); }

  static Image from_tensor(const Tensor& t) {
    if (t.shape.size() != 3) throw std::invalid_argument("image: tensor must be (C,H,W)");
    Image img(t.shape[1], t.shape[2], t.shape[0]);
    img.data = t.v;
    return img;
  }
};

inline bool images_equal(const Image& a, const Image& b) { return a.same_dims(b) && a.data == b.data; }

inline double max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_dims(b)) throw std::invalid_argument("max_abs_diff: dimension mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

// 8-bit PNG on disk; intensities are value/255, saved with round-half-up.
inline uint8_t quantize8(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return static_cast<uint8_t>(std::floor(v * 255.0 + 0.5));
}

inline Image read_png(const std::string& path) {
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str()))
    throw std::runtime_error("read_png: cannot open " + path + ": " + im.message);

  const bool gray = (im.format & PNG_FORMAT_FLAG_COLOR) == 0;
  im.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int channels = gray ? 1 : 3;

  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = im.message;
    png_image_free(&im);
    throw std::runtime_error("read_png: decode failed for " + path + ": " + msg);
  }

  Image img(static_cast<int>(im.height), static_cast<int>(im.width), channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = buf[(static_cast<size_t>(y) * img.width + x) * channels + c] / 255.0;
  return img;
}

inline void write_png(const std::string& path, const Image& img) {
  std::vector<uint8_t> buf(img.pixels() * img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        buf[(static_cast<size_t>(y) * img.width + x) * img.channels + c] = quantize8(img.at(c, y, x));

  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(img.width);
  im.height = static_cast<png_uint_32>(img.height);
  im.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("write_png: cannot write " + path + ": " + im.message);
}

}  // namespace facesr
