#pragma once

#include "umat/image.hpp"

namespace umat {

// Bilinear resample with half-pixel-centered sampling: output pixel ox maps
// to source coordinate (ox + 0.5) * w_in / w_out - 0.5, lattice neighbours
// clamped at the borders. Output values never leave the input value range.
FloatImage resize_bilinear(const FloatImage& img, int out_w, int out_h);

}  // namespace umat
