#include "umat/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace umat {

namespace {

struct MemReader {
  const uint8_t* bytes;
  size_t size;
  size_t offset;
  std::string error;
};

void read_callback(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<MemReader*>(png_get_io_ptr(png));
  if (r->offset + n > r->size) {
    png_error(png, "unexpected end of stream");
    return;
  }
  std::memcpy(out, r->bytes + r->offset, n);
  r->offset += n;
}

void reader_error(png_structp png, png_const_charp msg) {
  auto* r = static_cast<MemReader*>(png_get_error_ptr(png));
  r->error = msg;
  longjmp(png_jmpbuf(png), 1);
}

void silent_warning(png_structp, png_const_charp) {}

struct MemWriter {
  std::vector<uint8_t> out;
  std::string error;
};

void write_callback(png_structp png, png_bytep data, png_size_t n) {
  auto* w = static_cast<MemWriter*>(png_get_io_ptr(png));
  w->out.insert(w->out.end(), data, data + n);
}

void flush_callback(png_structp) {}

void writer_error(png_structp png, png_const_charp msg) {
  auto* w = static_cast<MemWriter*>(png_get_error_ptr(png));
  w->error = msg;
  longjmp(png_jmpbuf(png), 1);
}

[[noreturn]] void fail_decode(const MemReader& r, const std::string& what) {
  throw DataError("PNG decode error at byte " + std::to_string(r.offset) + ": " + what);
}

}  // namespace

ImageBuffer decode_image(std::span<const uint8_t> bytes) {
  MemReader reader{bytes.data(), bytes.size(), 0, {}};
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
    fail_decode(reader, "missing PNG signature");

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &reader, reader_error, silent_warning);
  if (!png) throw InternalError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw InternalError("png_create_info_struct failed");
  }

  ImageBuffer img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    std::string msg = reader.error.empty() ? "corrupt stream" : reader.error;
    size_t off = reader.offset;
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("PNG decode error at byte " + std::to_string(off) + ": " + msg);
  }

  png_set_read_fn(png, &reader, read_callback);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);

  if (color == PNG_COLOR_TYPE_RGBA || color == PNG_COLOR_TYPE_GRAY_ALPHA ||
      png_get_valid(png, info, PNG_INFO_tRNS))
    png_error(png, "alpha channel not supported");
  if (color == PNG_COLOR_TYPE_PALETTE) png_error(png, "palette images not supported");
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  else if (depth != 8)
    png_error(png, "only 8-bit depth supported");
  if (color == PNG_COLOR_TYPE_GRAY) png_set_gray_to_rgb(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  if (png_get_channels(png, info) != 3) png_error(png, "unexpected channel count");
  if (w == 0 || h == 0) png_error(png, "empty image");

  img = ImageBuffer(static_cast<int>(w), static_cast<int>(h));
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.data.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

std::vector<uint8_t> encode_image(const ImageBuffer& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.data.size() != static_cast<size_t>(img.width) * img.height * 3)
    throw InternalError("encode_image: inconsistent buffer");

  MemWriter writer;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &writer, writer_error, silent_warning);
  if (!png) throw InternalError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw InternalError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    std::string msg = writer.error.empty() ? "write failure" : writer.error;
    png_destroy_write_struct(&png, &info);
    throw InternalError("PNG encode error: " + msg);
  }

  png_set_write_fn(png, &writer, write_callback, flush_callback);
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.data.data() + static_cast<size_t>(y) * img.width * 3));
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
  return std::move(writer.out);
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw DataError("read failed: " + path);
  return bytes;
}

void write_file_bytes(std::span<const uint8_t> bytes, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path);
}

ImageBuffer read_png_file(const std::string& path) {
  try {
    return decode_image(read_file_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_png_file(const ImageBuffer& img, const std::string& path) {
  auto bytes = encode_image(img);
  write_file_bytes(bytes, path);
}

}  // namespace umat
