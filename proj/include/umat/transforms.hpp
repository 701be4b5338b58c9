#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "umat/image.hpp"

namespace umat {

enum class TransformKind {
  none,
  color_jitter,
  gaussian_noise,
  gaussian_blur,
  resize_corrupt,
  pixel_shuffle,
  external_dir,
};

const char* transform_kind_name(TransformKind k);
TransformKind transform_kind_from_name(std::string_view name);

// One corruption applied identically to train and test images. Randomized
// kinds draw from a stream keyed by (seed, image_id), so a given image is
// corrupted the same way no matter the batch, epoch or worker that touches
// it. strength means: jitter scale s for color_jitter, sigma for
// gaussian_noise, kernel size r for gaussian_blur, target side N for
// resize_corrupt; unused otherwise.
struct TransformSpec {
  TransformKind kind = TransformKind::none;
  double strength = 0.0;
  uint64_t seed = 0;
  std::string external_root;

  void validate() const;
  // Compact label for table axes: "none", "jitter1", "noise0.2", "blur3",
  // "resize64", "shuffle", "external:<dirname>".
  std::string cell_label() const;
  nlohmann::json to_json() const;
  static TransformSpec from_json(const nlohmann::json& j);
};

// image_id is the image's manifest path; it keys the per-image random stream
// and resolves the replacement file for external_dir.
FloatImage apply_transform(const TransformSpec& spec, const FloatImage& img,
                           std::string_view image_id);

// Separable Gaussian with the given standard deviation in pixels, kernel
// truncated at ±ceil(3·stddev), normalized, borders replicated. Returns the
// input unchanged when stddev <= 0.
FloatImage gaussian_blur_stddev(const FloatImage& img, double stddev);

// Binary structure map: Rec. 601 luminance, central differences with
// replicated borders, gradient magnitude scaled by sqrt(2) so the attainable
// range is [0, 1], then thresholded at 0.1. All three output channels carry
// the same 0/1 values. Palette changes that preserve luminance leave this
// map unchanged; geometry changes move it.
FloatImage edge_proxy(const FloatImage& img);

}  // namespace umat
