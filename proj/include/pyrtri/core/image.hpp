#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pyrtri/core/error.hpp"

namespace pyrtri {

/// Dense height x width x channels buffer, row-major, channels innermost.
template <typename T>
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  Image() = default;
  Image(int h, int w, int c, T fill = T(0))
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {
    detail::require(h >= 0 && w >= 0 && c >= 0, "image dimensions must be non-negative");
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }

  T& at(int row, int col, int ch) {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  const T& at(int row, int col, int ch) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }

  std::span<T> pixel(std::size_t index) {
    return std::span<T>(data).subspan(index * channels, channels);
  }
  std::span<const T> pixel(std::size_t index) const {
    return std::span<const T>(data).subspan(index * channels, channels);
  }

  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  template <typename U>
  Image<U> cast() const {
    Image<U> out(height, width, channels);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  bool operator==(const Image&) const = default;
};

/// Rec. 601 luma of an RGB image; single-channel images pass through.
template <typename T>
Image<T> to_luma(const Image<T>& img) {
  if (img.channels == 1) return img;
  detail::require(img.channels == 3, "luma conversion expects 1 or 3 channels");
  Image<T> out(img.height, img.width, 1);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const T* p = &img.data[i * 3];
    out.data[i] = T(0.299) * p[0] + T(0.587) * p[1] + T(0.114) * p[2];
  }
  return out;
}

/// 2x2 box downsample; odd trailing rows/cols are dropped.
template <typename T>
Image<T> downsample2(const Image<T>& img) {
  Image<T> out(img.height / 2, img.width / 2, img.channels);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c)
      for (int ch = 0; ch < img.channels; ++ch)
        out.at(r, c, ch) = T(0.25) * (img.at(2 * r, 2 * c, ch) + img.at(2 * r + 1, 2 * c, ch) +
                                      img.at(2 * r, 2 * c + 1, ch) + img.at(2 * r + 1, 2 * c + 1, ch));
  return out;
}

}  // namespace pyrtri
