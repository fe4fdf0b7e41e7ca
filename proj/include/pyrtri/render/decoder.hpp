#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/random.hpp"

namespace pyrtri {

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus(T x) {
  return std::log1p(std::exp(-std::abs(x))) + std::max(x, T(0));
}

template <typename T>
T silu(T x) {
  return x * sigmoid(x);
}

template <typename T>
T silu_grad(T x) {
  const T s = sigmoid(x);
  return s * (T(1) + x * (T(1) - s));
}

/// Per-sample MLP: features -> SiLU hidden layer -> (density, color features).
/// density = softplus(out[0] - density_shift), color_j = sigmoid(out[1 + j]).
/// `density_shift` is a fixed activation offset, not a trainable parameter: with zero
/// features and zero biases the field is (numerically) empty.
template <typename T>
struct DecoderParams {
  int in_channels = 0;
  int hidden = 0;
  int color_features = 0;
  std::vector<T> w1;  // hidden x in_channels
  std::vector<T> b1;  // hidden
  std::vector<T> w2;  // (1 + color_features) x hidden
  std::vector<T> b2;  // 1 + color_features
  T density_shift = T(8);

  int out_size() const { return 1 + color_features; }

  static DecoderParams zeros(int in_channels, int hidden = 64, int color_features = 8) {
    detail::require(in_channels > 0 && hidden > 0 && color_features > 0, "decoder sizes must be positive");
    DecoderParams p;
    p.in_channels = in_channels;
    p.hidden = hidden;
    p.color_features = color_features;
    p.w1.assign(static_cast<std::size_t>(hidden) * in_channels, T(0));
    p.b1.assign(hidden, T(0));
    p.w2.assign(static_cast<std::size_t>(p.out_size()) * hidden, T(0));
    p.b2.assign(p.out_size(), T(0));
    return p;
  }

  /// Gaussian weights scaled by 1/sqrt(fan_in); zero biases.
  static DecoderParams random(int in_channels, std::uint64_t seed, int hidden = 64, int color_features = 8) {
    auto p = zeros(in_channels, hidden, color_features);
    auto rng = make_rng(seed, 0xdec0de);
    const double s1 = 1.0 / std::sqrt(double(in_channels));
    const double s2 = 1.0 / std::sqrt(double(hidden));
    for (auto& v : p.w1) v = static_cast<T>(s1 * standard_normal(rng));
    for (auto& v : p.w2) v = static_cast<T>(s2 * standard_normal(rng));
    return p;
  }

  void validate() const {
    detail::require(w1.size() == static_cast<std::size_t>(hidden) * in_channels && b1.size() == std::size_t(hidden) &&
                        w2.size() == static_cast<std::size_t>(out_size()) * hidden &&
                        b2.size() == std::size_t(out_size()),
                    "decoder parameter shapes are inconsistent");
    auto finite = [](const std::vector<T>& v) { return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); }); };
    detail::require(finite(w1) && finite(b1) && finite(w2) && finite(b2) && std::isfinite(density_shift),
                    "decoder parameters must be finite");
  }

  template <typename U>
  DecoderParams<U> cast() const {
    DecoderParams<U> o;
    o.in_channels = in_channels;
    o.hidden = hidden;
    o.color_features = color_features;
    o.w1.assign(w1.begin(), w1.end());
    o.b1.assign(b1.begin(), b1.end());
    o.w2.assign(w2.begin(), w2.end());
    o.b2.assign(b2.begin(), b2.end());
    o.density_shift = static_cast<U>(density_shift);
    return o;
  }

  bool operator==(const DecoderParams&) const = default;
};

/// Scratch for one decoder evaluation; `hidden_pre` and `out_pre` are what the adjoint needs.
template <typename T>
struct DecoderActivations {
  std::vector<T> hidden_pre;
  std::vector<T> hidden;
  std::vector<T> out_pre;

  explicit DecoderActivations(const DecoderParams<T>& p)
      : hidden_pre(p.hidden), hidden(p.hidden), out_pre(p.out_size()) {}
};

/// Returns density and writes color features into `color`.
template <typename T>
T decode(const DecoderParams<T>& p, std::span<const T> features, std::span<T> color, DecoderActivations<T>& act) {
  const int in = p.in_channels;
  for (int h = 0; h < p.hidden; ++h) {
    T acc = p.b1[h];
    const T* row = &p.w1[static_cast<std::size_t>(h) * in];
    for (int c = 0; c < in; ++c) acc += row[c] * features[c];
    act.hidden_pre[h] = acc;
    act.hidden[h] = silu(acc);
  }
  for (int o = 0; o < p.out_size(); ++o) {
    T acc = p.b2[o];
    const T* row = &p.w2[static_cast<std::size_t>(o) * p.hidden];
    for (int h = 0; h < p.hidden; ++h) acc += row[h] * act.hidden[h];
    act.out_pre[o] = acc;
  }
  for (int j = 0; j < p.color_features; ++j) color[j] = sigmoid(act.out_pre[1 + j]);
  return softplus(act.out_pre[0] - p.density_shift);
}

/// Adjoint of `decode`: given d/d density and d/d color, writes d/d features.
/// `hidden_pre` and `out_pre` come from the forward pass. `scratch` needs `hidden` entries.
template <typename T>
void decode_backward(const DecoderParams<T>& p, std::span<const T> hidden_pre, std::span<const T> out_pre,
                     T grad_density, std::span<const T> grad_color, std::span<T> grad_features,
                     std::span<T> scratch_out, std::span<T> scratch_hidden) {
  scratch_out[0] = grad_density * sigmoid(out_pre[0] - p.density_shift);
  for (int j = 0; j < p.color_features; ++j) {
    const T c = sigmoid(out_pre[1 + j]);
    scratch_out[1 + j] = grad_color[j] * c * (T(1) - c);
  }
  for (int h = 0; h < p.hidden; ++h) {
    T acc = T(0);
    for (int o = 0; o < p.out_size(); ++o) acc += p.w2[static_cast<std::size_t>(o) * p.hidden + h] * scratch_out[o];
    scratch_hidden[h] = acc * silu_grad(hidden_pre[h]);
  }
  std::fill(grad_features.begin(), grad_features.end(), T(0));
  for (int h = 0; h < p.hidden; ++h) {
    const T g = scratch_hidden[h];
    if (g == T(0)) continue;
    const T* row = &p.w1[static_cast<std::size_t>(h) * p.in_channels];
    for (int c = 0; c < p.in_channels; ++c) grad_features[c] += row[c] * g;
  }
}

}  // namespace pyrtri
