#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "umat/image.hpp"

namespace umat {

// Decodes an 8-bit RGB or grayscale PNG. Grayscale is expanded to three
// equal channels. Images with an alpha channel (or tRNS), palette images and
// bit depths other than 8 are rejected. Errors carry the byte offset reached
// in the stream plus libpng's message.
ImageBuffer decode_image(std::span<const uint8_t> bytes);

// Encodes 8-bit RGB with fixed settings (zlib level 6, no filtering, no
// ancillary chunks), so equal pixels yield byte-identical files.
std::vector<uint8_t> encode_image(const ImageBuffer& img);

ImageBuffer read_png_file(const std::string& path);
void write_png_file(const ImageBuffer& img, const std::string& path);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(std::span<const uint8_t> bytes, const std::string& path);

}  // namespace umat
