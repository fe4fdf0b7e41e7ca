#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/image.hpp"
#include "pyrtri/core/random.hpp"

namespace pyrtri {

/// Latent-modulated map from composited color features to RGB.
///   scales = affine * w + affine_bias                    (one per color feature)
///   rgb    = clamp(linear * (scales . F) + W * bias + (1 - W) * background, 0, 1)
/// where F is the composited feature and W the accumulated opacity.
template <typename T>
struct ToRgbParams {
  int latent_dim = 0;
  int color_features = 0;
  std::vector<T> affine;       // color_features x latent_dim
  std::vector<T> affine_bias;  // color_features
  std::vector<T> linear;       // 3 x color_features
  std::array<T, 3> bias{};
  std::array<T, 3> background{T(1), T(1), T(1)};

  static ToRgbParams identity_modulation(int latent_dim, int color_features) {
    detail::require(latent_dim >= 0 && color_features > 0, "ToRGB sizes must be valid");
    ToRgbParams p;
    p.latent_dim = latent_dim;
    p.color_features = color_features;
    p.affine.assign(static_cast<std::size_t>(color_features) * latent_dim, T(0));
    p.affine_bias.assign(color_features, T(1));
    p.linear.assign(3 * static_cast<std::size_t>(color_features), T(0));
    return p;
  }

  /// Feature j feeds channel j % 3 with weight 3 / color_features, plus small seeded noise;
  /// the affine part is small so scales start near 1.
  static ToRgbParams random(int latent_dim, int color_features, std::uint64_t seed) {
    auto p = identity_modulation(latent_dim, color_features);
    auto rng = make_rng(seed, 0x70b9b);
    const double a = latent_dim > 0 ? 0.1 / std::sqrt(double(latent_dim)) : 0.0;
    for (auto& v : p.affine) v = static_cast<T>(a * standard_normal(rng));
    for (int c = 0; c < 3; ++c)
      for (int j = 0; j < color_features; ++j)
        p.linear[c * color_features + j] =
            static_cast<T>((j % 3 == c ? 3.0 / color_features : 0.0) + 0.05 * standard_normal(rng));
    return p;
  }

  std::vector<T> modulation(std::span<const T> w) const {
    detail::require(w.size() == static_cast<std::size_t>(latent_dim), "latent code has wrong dimension");
    std::vector<T> s(affine_bias.begin(), affine_bias.end());
    for (int j = 0; j < color_features; ++j)
      for (int d = 0; d < latent_dim; ++d) s[j] += affine[static_cast<std::size_t>(j) * latent_dim + d] * w[d];
    return s;
  }

  void validate() const {
    detail::require(affine.size() == static_cast<std::size_t>(color_features) * latent_dim &&
                        affine_bias.size() == std::size_t(color_features) &&
                        linear.size() == 3 * static_cast<std::size_t>(color_features),
                    "ToRGB parameter shapes are inconsistent");
    auto finite = [](const auto& v) { return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); }); };
    detail::require(finite(affine) && finite(affine_bias) && finite(linear) && finite(bias) && finite(background),
                    "ToRGB parameters must be finite");
  }

  template <typename U>
  ToRgbParams<U> cast() const {
    ToRgbParams<U> o;
    o.latent_dim = latent_dim;
    o.color_features = color_features;
    o.affine.assign(affine.begin(), affine.end());
    o.affine_bias.assign(affine_bias.begin(), affine_bias.end());
    o.linear.assign(linear.begin(), linear.end());
    for (int c = 0; c < 3; ++c) {
      o.bias[c] = static_cast<U>(bias[c]);
      o.background[c] = static_cast<U>(background[c]);
    }
    return o;
  }

  bool operator==(const ToRgbParams&) const = default;
};

/// Pre-clamp RGB of one pixel.
template <typename T>
std::array<T, 3> to_rgb_preclamp(const ToRgbParams<T>& p, std::type_identity_t<std::span<const T>> scales,
                                 std::type_identity_t<std::span<const T>> feature, T weight_sum) {
  std::array<T, 3> out{};
  for (int c = 0; c < 3; ++c) {
    T acc = T(0);
    for (int j = 0; j < p.color_features; ++j) acc += p.linear[c * p.color_features + j] * (scales[j] * feature[j]);
    out[c] = acc + weight_sum * p.bias[c] + (T(1) - weight_sum) * p.background[c];
  }
  return out;
}

/// Applies ToRGB with explicit modulation scales to a whole feature image.
template <typename T>
Image<T> to_rgb_scaled(const Image<T>& feature, const Image<T>& weight_sum, std::span<const T> scales,
                       const ToRgbParams<T>& p) {
  detail::require(feature.channels == p.color_features, "feature image channels must equal color features");
  detail::require(weight_sum.channels == 1 && weight_sum.height == feature.height && weight_sum.width == feature.width,
                  "weight-sum image shape must match the feature image");
  detail::require(scales.size() == static_cast<std::size_t>(p.color_features), "scale vector has wrong length");
  Image<T> rgb(feature.height, feature.width, 3);
  for (std::size_t i = 0; i < feature.pixel_count(); ++i) {
    const auto pre = to_rgb_preclamp(p, scales, feature.pixel(i), weight_sum.data[i]);
    for (int c = 0; c < 3; ++c) rgb.data[i * 3 + c] = std::clamp(pre[c], T(0), T(1));
  }
  return rgb;
}

template <typename T>
Image<T> to_rgb(const Image<T>& feature, const Image<T>& weight_sum, std::span<const T> w, const ToRgbParams<T>& p) {
  const auto scales = p.modulation(w);
  return to_rgb_scaled(feature, weight_sum, std::span<const T>(scales), p);
}

}  // namespace pyrtri
