#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "umat/error.hpp"

namespace umat {

// 8-bit image, interleaved RGB, row-major. channels is fixed at 3; grayscale
// sources are expanded on decode and alpha is rejected.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  static constexpr int channels = 3;
  std::vector<uint8_t> data;  // size = width * height * 3

  ImageBuffer() = default;
  ImageBuffer(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 0) {
    if (w <= 0 || h <= 0) throw InternalError("ImageBuffer: non-positive size");
  }

  uint8_t& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  uint8_t at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

// Float image with the same interleaved layout. Values are nominally in
// [0, 1]; transforms clamp where their contract says so.
struct FloatImage {
  int width = 0;
  int height = 0;
  static constexpr int channels = 3;
  std::vector<float> data;

  FloatImage() = default;
  FloatImage(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 0.0f) {
    if (w <= 0 || h <= 0) throw InternalError("FloatImage: non-positive size");
  }

  float& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

inline FloatImage to_float(const ImageBuffer& img) {
  FloatImage out(img.width, img.height);
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] * (1.0f / 255.0f);
  return out;
}

// Rounds to the nearest code and clamps to [0, 255].
inline ImageBuffer to_bytes(const FloatImage& img) {
  ImageBuffer out(img.width, img.height);
  for (size_t i = 0; i < img.data.size(); ++i) {
    float v = std::round(img.data[i] * 255.0f);
    out.data[i] = static_cast<uint8_t>(std::clamp(v, 0.0f, 255.0f));
  }
  return out;
}

}  // namespace umat
