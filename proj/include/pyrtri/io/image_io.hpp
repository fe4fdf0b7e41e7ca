#pragma once

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "pyrtri/core/bytes.hpp"
#include "pyrtri/core/image.hpp"
#include "pyrtri/guidance/protocol.hpp"
#include "pyrtri/io/files.hpp"

namespace pyrtri {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

// libpng reports errors by longjmp back to the setjmp in the caller; the message is kept here.
struct PngError {
  char message[256] = "unknown error";
};

inline void png_fail(png_structp png, png_const_charp msg) {
  auto* err = static_cast<PngError*>(png_get_error_ptr(png));
  std::snprintf(err->message, sizeof(err->message), "%s", msg);
  png_longjmp(png, 1);
}
inline void png_warn(png_structp, png_const_charp) {}

inline void png_append(png_structp png, png_bytep data, png_size_t n) {
  static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(data), n);
}
inline void png_flush(png_structp) {}

inline std::uint8_t to_byte(float v) {
  const float c = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace detail

/// 8-bit PNG of an image in [0, 1] (values are clamped); 1 channel gray, 3 channels RGB.
inline std::string encode_png(const Image<float>& img) {
  detail::require(img.channels == 1 || img.channels == 3, "PNG export needs 1 or 3 channels");
  detail::require(img.height > 0 && img.width > 0, "PNG export needs a non-empty image");
  std::string out;
  std::vector<std::uint8_t> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = detail::to_byte(img.data[i]);
  detail::PngError err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_fail, detail::png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(std::string("png: ") + err.message);
  }
  png_set_write_fn(png, &out, detail::png_append, detail::png_flush);
  png_set_IHDR(png, info, img.width, img.height, 8, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int r = 0; r < img.height; ++r) png_write_row(png, bytes.data() + r * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

/// Any PNG, converted to 8-bit RGB, as floats in [0, 1].
inline Image<float> read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  detail::PngError err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_fail, detail::png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png: out of memory");
  }
  std::vector<std::uint8_t> bytes;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png: " + path.string() + ": " + err.message);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  if (png_get_channels(png, info) != 3 || w == 0 || h == 0 || w > 16384 || h > 16384)
    png_error(png, "unsupported PNG layout");
  bytes.resize(std::size_t(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = bytes.data() + std::size_t(r) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  Image<float> img(static_cast<int>(h), static_cast<int>(w), 3);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0f;
  return img;
}

/// Exact float32 sidecar: one wire-protocol tensor block.
inline std::string encode_pgim(const Image<float>& img) {
  ByteWriter w;
  wire::write_tensor(w, img);
  return w.take();
}

inline Image<float> decode_pgim(std::string_view bytes) {
  ByteReader<IoError> rd(bytes);
  auto img = wire::read_tensor(rd);
  if (!rd.done()) throw IoError("trailing bytes in float image");
  return img;
}

inline void write_png(const std::filesystem::path& path, const Image<float>& img) { atomic_write(path, encode_png(img)); }
inline void write_pgim(const std::filesystem::path& path, const Image<float>& img) { atomic_write(path, encode_pgim(img)); }

/// PNG for viewing plus the exact .pgim sidecar next to it.
inline void write_image_pair(const std::filesystem::path& png_path, const Image<float>& img) {
  write_png(png_path, img);
  auto side = png_path;
  side.replace_extension(".pgim");
  write_pgim(side, img);
}

/// Loads .pgim exactly or .png quantized; anything else is an error.
inline Image<float> load_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".pgim") return decode_pgim(read_file(path));
  if (ext == ".png") return read_png(path);
  throw IoError("unsupported image extension: " + path.string());
}

}  // namespace pyrtri
