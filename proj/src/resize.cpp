#include "umat/resize.hpp"

#include <algorithm>
#include <cmath>

namespace umat {

FloatImage resize_bilinear(const FloatImage& img, int out_w, int out_h) {
  if (out_w <= 0 || out_h <= 0) throw InternalError("resize_bilinear: non-positive output size");
  if (img.width == out_w && img.height == out_h) return img;

  FloatImage out(out_w, out_h);
  const double sx = static_cast<double>(img.width) / out_w;
  const double sy = static_cast<double>(img.height) / out_h;

  std::vector<int> x0(out_w), x1(out_w);
  std::vector<float> fx(out_w);
  for (int ox = 0; ox < out_w; ++ox) {
    double src = (ox + 0.5) * sx - 0.5;
    double fl = std::floor(src);
    int i = static_cast<int>(fl);
    x0[ox] = std::clamp(i, 0, img.width - 1);
    x1[ox] = std::clamp(i + 1, 0, img.width - 1);
    fx[ox] = static_cast<float>(src - fl);
  }

  for (int oy = 0; oy < out_h; ++oy) {
    double src = (oy + 0.5) * sy - 0.5;
    double fl = std::floor(src);
    int i = static_cast<int>(fl);
    const int y0 = std::clamp(i, 0, img.height - 1);
    const int y1 = std::clamp(i + 1, 0, img.height - 1);
    const float fy = static_cast<float>(src - fl);
    for (int ox = 0; ox < out_w; ++ox) {
      for (int c = 0; c < 3; ++c) {
        float top = img.at(x0[ox], y0, c) * (1.0f - fx[ox]) + img.at(x1[ox], y0, c) * fx[ox];
        float bot = img.at(x0[ox], y1, c) * (1.0f - fx[ox]) + img.at(x1[ox], y1, c) * fx[ox];
        out.at(ox, oy, c) = top * (1.0f - fy) + bot * fy;
      }
    }
  }
  return out;
}

}  // namespace umat
