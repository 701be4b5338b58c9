#include "umat/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <vector>

#include "umat/png_io.hpp"
#include "umat/resize.hpp"
#include "umat/rng.hpp"

namespace umat {

namespace {

constexpr double kPi = 3.14159265358979323846;

void clamp01(FloatImage& img) {
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max({r, g, b});
  float mn = std::min({r, g, b});
  float d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.0f + (b - r) / d;
  else
    h = 4.0f + (r - g) / d;
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  float hh = h * 6.0f;
  int i = std::min(5, static_cast<int>(hh));
  float f = hh - i;
  float p = v * (1.0f - s);
  float q = v * (1.0f - s * f);
  float t = v * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

// Draw order is fixed: brightness factor, contrast factor, hue shift. The hue
// range grows slower than the photometric factors, matching common augmentation
// recipes that cap hue displacement.
FloatImage color_jitter(const FloatImage& img, double s, Rng& rng) {
  const double lo = std::max(0.0, 1.0 - 0.35 * s);
  const double hi = 1.0 + 0.35 * s;
  const float bright = static_cast<float>(rng.next_range(lo, hi));
  const float contrast = static_cast<float>(rng.next_range(lo, hi));
  const float hue = static_cast<float>(rng.next_range(-0.04 * s, 0.04 * s));

  FloatImage out = img;
  for (float& v : out.data) v *= bright;

  double sum = std::accumulate(out.data.begin(), out.data.end(), 0.0);
  const float mean = static_cast<float>(sum / out.data.size());
  for (float& v : out.data) v = (v - mean) * contrast + mean;

  if (hue != 0.0f) {
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        float h, sat, val;
        float r = std::clamp(out.at(x, y, 0), 0.0f, 1.0f);
        float g = std::clamp(out.at(x, y, 1), 0.0f, 1.0f);
        float b = std::clamp(out.at(x, y, 2), 0.0f, 1.0f);
        rgb_to_hsv(r, g, b, h, sat, val);
        hsv_to_rgb(h + hue, sat, val, r, g, b);
        out.at(x, y, 0) = r;
        out.at(x, y, 1) = g;
        out.at(x, y, 2) = b;
      }
  }
  clamp01(out);
  return out;
}

FloatImage gaussian_noise(const FloatImage& img, double sigma, Rng& rng) {
  FloatImage out = img;
  for (float& v : out.data) {
    v += static_cast<float>(sigma * rng.next_gaussian());
    v = std::clamp(v, 0.0f, 1.0f);
  }
  return out;
}

std::vector<float> gaussian_kernel(double stddev) {
  const int radius = static_cast<int>(std::ceil(3.0 * stddev));
  std::vector<float> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double w = std::exp(-0.5 * (i * i) / (stddev * stddev));
    k[static_cast<size_t>(i + radius)] = static_cast<float>(w);
    sum += w;
  }
  for (float& w : k) w = static_cast<float>(w / sum);
  return k;
}

std::string format_strength(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

FloatImage gaussian_blur_stddev(const FloatImage& img, double stddev) {
  if (stddev <= 0.0) return img;
  const auto k = gaussian_kernel(stddev);
  const int radius = (static_cast<int>(k.size()) - 1) / 2;

  FloatImage tmp(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i) {
          int xi = std::clamp(x + i, 0, img.width - 1);
          acc += k[static_cast<size_t>(i + radius)] * img.at(xi, y, c);
        }
        tmp.at(x, y, c) = acc;
      }

  FloatImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i) {
          int yi = std::clamp(y + i, 0, img.height - 1);
          acc += k[static_cast<size_t>(i + radius)] * tmp.at(x, yi, c);
        }
        out.at(x, y, c) = acc;
      }
  return out;
}

namespace {

FloatImage pixel_shuffle(const FloatImage& img, Rng& rng) {
  const size_t n = static_cast<size_t>(img.width) * img.height;
  std::vector<uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  rng.shuffle(perm);
  FloatImage out(img.width, img.height);
  for (size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) out.data[i * 3 + c] = img.data[static_cast<size_t>(perm[i]) * 3 + c];
  return out;
}

}  // namespace

const char* transform_kind_name(TransformKind k) {
  switch (k) {
    case TransformKind::none: return "none";
    case TransformKind::color_jitter: return "color_jitter";
    case TransformKind::gaussian_noise: return "gaussian_noise";
    case TransformKind::gaussian_blur: return "gaussian_blur";
    case TransformKind::resize_corrupt: return "resize_corrupt";
    case TransformKind::pixel_shuffle: return "pixel_shuffle";
    case TransformKind::external_dir: return "external_dir";
  }
  throw InternalError("unknown TransformKind");
}

TransformKind transform_kind_from_name(std::string_view name) {
  for (TransformKind k :
       {TransformKind::none, TransformKind::color_jitter, TransformKind::gaussian_noise,
        TransformKind::gaussian_blur, TransformKind::resize_corrupt, TransformKind::pixel_shuffle,
        TransformKind::external_dir}) {
    if (name == transform_kind_name(k)) return k;
  }
  throw ConfigError("unknown transform kind: " + std::string(name));
}

void TransformSpec::validate() const {
  switch (kind) {
    case TransformKind::none:
    case TransformKind::pixel_shuffle:
      break;
    case TransformKind::color_jitter:
      if (strength < 0.0) throw ConfigError("color_jitter strength must be >= 0");
      break;
    case TransformKind::gaussian_noise:
      if (strength < 0.0) throw ConfigError("gaussian_noise sigma must be >= 0");
      break;
    case TransformKind::gaussian_blur:
      if (strength < 0.0) throw ConfigError("gaussian_blur kernel size must be >= 0");
      break;
    case TransformKind::resize_corrupt:
      if (strength < 1.0 || strength != std::floor(strength))
        throw ConfigError("resize_corrupt target side must be a positive integer");
      break;
    case TransformKind::external_dir:
      if (external_root.empty()) throw ConfigError("external_dir requires external_root");
      break;
  }
}

std::string TransformSpec::cell_label() const {
  switch (kind) {
    case TransformKind::none: return "none";
    case TransformKind::color_jitter: return "jitter" + format_strength(strength);
    case TransformKind::gaussian_noise: return "noise" + format_strength(strength);
    case TransformKind::gaussian_blur: return "blur" + format_strength(strength);
    case TransformKind::resize_corrupt: return "resize" + format_strength(strength);
    case TransformKind::pixel_shuffle: return "shuffle";
    case TransformKind::external_dir:
      return "external:" + std::filesystem::path(external_root).filename().string();
  }
  throw InternalError("unknown TransformKind");
}

nlohmann::json TransformSpec::to_json() const {
  nlohmann::json j{{"kind", transform_kind_name(kind)}, {"strength", strength}, {"seed", seed}};
  if (!external_root.empty()) j["external_root"] = external_root;
  return j;
}

TransformSpec TransformSpec::from_json(const nlohmann::json& j) {
  TransformSpec s;
  s.kind = transform_kind_from_name(j.at("kind").get<std::string>());
  s.strength = j.value("strength", 0.0);
  s.seed = j.value("seed", uint64_t{0});
  s.external_root = j.value("external_root", std::string{});
  s.validate();
  return s;
}

FloatImage apply_transform(const TransformSpec& spec, const FloatImage& img,
                           std::string_view image_id) {
  Rng rng(hash_combine(spec.seed, hash_str(image_id)));
  switch (spec.kind) {
    case TransformKind::none:
      return img;
    case TransformKind::color_jitter:
      return color_jitter(img, spec.strength, rng);
    case TransformKind::gaussian_noise:
      return gaussian_noise(img, spec.strength, rng);
    case TransformKind::gaussian_blur:
      return gaussian_blur_stddev(img, spec.strength / 2.0);
    case TransformKind::resize_corrupt: {
      const int n = static_cast<int>(spec.strength);
      FloatImage small = resize_bilinear(img, n, n);
      return resize_bilinear(small, img.width, img.height);
    }
    case TransformKind::pixel_shuffle:
      return pixel_shuffle(img, rng);
    case TransformKind::external_dir: {
      const std::string path =
          (std::filesystem::path(spec.external_root) / std::string(image_id)).string();
      return to_float(read_png_file(path));
    }
  }
  throw InternalError("unknown TransformKind");
}

FloatImage edge_proxy(const FloatImage& img) {
  const int w = img.width;
  const int h = img.height;
  std::vector<float> lum(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      lum[static_cast<size_t>(y) * w + x] =
          0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) + 0.114f * img.at(x, y, 2);

  auto at = [&](int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return lum[static_cast<size_t>(y) * w + x];
  };

  // |gx|, |gy| <= 1/2 for luminance in [0, 1], so magnitude <= sqrt(2)/2 and
  // scaling by sqrt(2) normalizes the attainable range to [0, 1].
  const float scale = static_cast<float>(std::sqrt(2.0));
  FloatImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float gx = 0.5f * (at(x + 1, y) - at(x - 1, y));
      float gy = 0.5f * (at(x, y + 1) - at(x, y - 1));
      float mag = std::sqrt(gx * gx + gy * gy) * scale;
      float bit = mag >= 0.1f ? 1.0f : 0.0f;
      out.at(x, y, 0) = bit;
      out.at(x, y, 1) = bit;
      out.at(x, y, 2) = bit;
    }
  return out;
}

}  // namespace umat
