#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/random.hpp"
#include "pyrtri/core/trigrid.hpp"
#include "pyrtri/render/decoder.hpp"

namespace pyrtri {

/// Channel-major feature map [channel][row][col].
template <typename T>
struct FeatureMap {
  int channels = 0;
  int size = 0;  // square
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(int c, int s) : channels(c), size(s), data(static_cast<std::size_t>(c) * s * s, T(0)) {}

  std::size_t plane() const { return static_cast<std::size_t>(size) * size; }
  T* channel(int c) { return data.data() + c * plane(); }
  const T* channel(int c) const { return data.data() + c * plane(); }
};

/// Convolution whose input channels are scaled by a latent-driven style
/// s = affine * w + affine_bias (affine_bias starts at 1). Kernel is 1 or 3, zero padded.
template <typename T>
struct ModulatedConv {
  int in = 0;
  int out = 0;
  int kernel = 1;
  std::vector<T> weight;       // out x in x kernel x kernel
  std::vector<T> bias;         // out
  std::vector<T> affine;       // in x latent_dim
  std::vector<T> affine_bias;  // in

  static ModulatedConv make(int in, int out, int kernel, int latent_dim) {
    ModulatedConv c;
    c.in = in;
    c.out = out;
    c.kernel = kernel;
    c.weight.assign(static_cast<std::size_t>(out) * in * kernel * kernel, T(0));
    c.bias.assign(out, T(0));
    c.affine.assign(static_cast<std::size_t>(in) * latent_dim, T(0));
    c.affine_bias.assign(in, T(1));
    return c;
  }

  void randomize(Rng& rng, int latent_dim) {
    const double ws = 1.0 / std::sqrt(double(in) * kernel * kernel);
    const double as = 1.0 / std::sqrt(double(std::max(latent_dim, 1)));
    for (auto& v : weight) v = static_cast<T>(ws * standard_normal(rng));
    for (auto& v : affine) v = static_cast<T>(0.2 * as * standard_normal(rng));
  }

  std::size_t parameter_count() const { return weight.size() + bias.size() + affine.size() + affine_bias.size(); }

  std::vector<T> style(std::span<const T> w) const {
    const std::size_t d = w.size();
    std::vector<T> s(affine_bias.begin(), affine_bias.end());
    for (int i = 0; i < in; ++i)
      for (std::size_t k = 0; k < d; ++k) s[i] += affine[i * d + k] * w[k];
    return s;
  }

  template <typename U>
  ModulatedConv<U> cast() const {
    ModulatedConv<U> o;
    o.in = in;
    o.out = out;
    o.kernel = kernel;
    o.weight.assign(weight.begin(), weight.end());
    o.bias.assign(bias.begin(), bias.end());
    o.affine.assign(affine.begin(), affine.end());
    o.affine_bias.assign(affine_bias.begin(), affine_bias.end());
    return o;
  }

  bool operator==(const ModulatedConv&) const = default;
};

namespace detail {

template <typename T>
FeatureMap<T> modconv_forward(const ModulatedConv<T>& conv, const FeatureMap<T>& x, std::span<const T> s) {
  require(x.channels == conv.in, "modulated conv input channel mismatch");
  const int n = x.size;
  const int k = conv.kernel;
  const int pad = k / 2;
  FeatureMap<T> y(conv.out, n);
  const std::size_t plane = x.plane();
  for (int o = 0; o < conv.out; ++o) {
    T* yo = y.channel(o);
    std::fill(yo, yo + plane, conv.bias[o]);
    for (int i = 0; i < conv.in; ++i) {
      const T* xi = x.channel(i);
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T wv = conv.weight[((static_cast<std::size_t>(o) * conv.in + i) * k + ky) * k + kx] * s[i];
          if (wv == T(0)) continue;
          const int dy = ky - pad, dx = kx - pad;
          for (int r = std::max(0, -dy); r < std::min(n, n - dy); ++r) {
            const T* src = xi + static_cast<std::size_t>(r + dy) * n;
            T* dst = yo + static_cast<std::size_t>(r) * n;
            for (int c = std::max(0, -dx); c < std::min(n, n - dx); ++c) dst[c] += wv * src[c + dx];
          }
        }
    }
  }
  return y;
}

/// Given d/dy, returns d/dx and accumulates d/ds (per input channel).
template <typename T>
FeatureMap<T> modconv_backward(const ModulatedConv<T>& conv, const FeatureMap<T>& x, std::span<const T> s,
                               const FeatureMap<T>& gy, std::span<T> gs) {
  const int n = x.size;
  const int k = conv.kernel;
  const int pad = k / 2;
  FeatureMap<T> gx(conv.in, n);
  for (int o = 0; o < conv.out; ++o) {
    const T* go = gy.channel(o);
    for (int i = 0; i < conv.in; ++i) {
      const T* xi = x.channel(i);
      T* gxi = gx.channel(i);
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T wraw = conv.weight[((static_cast<std::size_t>(o) * conv.in + i) * k + ky) * k + kx];
          const T wv = wraw * s[i];
          const int dy = ky - pad, dx = kx - pad;
          T gw = T(0);
          for (int r = std::max(0, -dy); r < std::min(n, n - dy); ++r) {
            const T* src = xi + static_cast<std::size_t>(r + dy) * n;
            T* gsrc = gxi + static_cast<std::size_t>(r + dy) * n;
            const T* g = go + static_cast<std::size_t>(r) * n;
            for (int c = std::max(0, -dx); c < std::min(n, n - dx); ++c) {
              gw += g[c] * src[c + dx];
              gsrc[c + dx] += wv * g[c];
            }
          }
          gs[i] += wraw * gw;
        }
    }
  }
  return gx;
}

/// Bilinear x2 upsampling with half-pixel centers and edge clamping (separable 0.75/0.25 taps).
template <typename T>
FeatureMap<T> upsample2(const FeatureMap<T>& x) {
  const int n = x.size;
  const int m = 2 * n;
  FeatureMap<T> y(x.channels, m);
  std::vector<T> rows(static_cast<std::size_t>(m) * n);
  for (int ch = 0; ch < x.channels; ++ch) {
    const T* src = x.channel(ch);
    // vertical pass: rows[m][n]
    for (int r = 0; r < n; ++r) {
      const T* cur = src + static_cast<std::size_t>(r) * n;
      const T* up = src + static_cast<std::size_t>(std::max(r - 1, 0)) * n;
      const T* dn = src + static_cast<std::size_t>(std::min(r + 1, n - 1)) * n;
      for (int c = 0; c < n; ++c) {
        rows[static_cast<std::size_t>(2 * r) * n + c] = T(0.75) * cur[c] + T(0.25) * up[c];
        rows[static_cast<std::size_t>(2 * r + 1) * n + c] = T(0.75) * cur[c] + T(0.25) * dn[c];
      }
    }
    T* dst = y.channel(ch);
    for (int r = 0; r < m; ++r) {
      const T* row = rows.data() + static_cast<std::size_t>(r) * n;
      T* out = dst + static_cast<std::size_t>(r) * m;
      for (int c = 0; c < n; ++c) {
        out[2 * c] = T(0.75) * row[c] + T(0.25) * row[std::max(c - 1, 0)];
        out[2 * c + 1] = T(0.75) * row[c] + T(0.25) * row[std::min(c + 1, n - 1)];
      }
    }
  }
  return y;
}

/// Adjoint of `upsample2`.
template <typename T>
FeatureMap<T> upsample2_adjoint(const FeatureMap<T>& gy) {
  const int m = gy.size;
  const int n = m / 2;
  FeatureMap<T> gx(gy.channels, n);
  std::vector<T> rows(static_cast<std::size_t>(m) * n);
  for (int ch = 0; ch < gy.channels; ++ch) {
    std::fill(rows.begin(), rows.end(), T(0));
    const T* g = gy.channel(ch);
    for (int r = 0; r < m; ++r) {
      const T* grow = g + static_cast<std::size_t>(r) * m;
      T* row = rows.data() + static_cast<std::size_t>(r) * n;
      for (int c = 0; c < n; ++c) {
        row[c] += T(0.75) * (grow[2 * c] + grow[2 * c + 1]);
        row[std::max(c - 1, 0)] += T(0.25) * grow[2 * c];
        row[std::min(c + 1, n - 1)] += T(0.25) * grow[2 * c + 1];
      }
    }
    T* dst = gx.channel(ch);
    for (int r = 0; r < n; ++r) {
      const T* r0 = rows.data() + static_cast<std::size_t>(2 * r) * n;
      const T* r1 = rows.data() + static_cast<std::size_t>(2 * r + 1) * n;
      T* cur = dst + static_cast<std::size_t>(r) * n;
      T* up = dst + static_cast<std::size_t>(std::max(r - 1, 0)) * n;
      T* dn = dst + static_cast<std::size_t>(std::min(r + 1, n - 1)) * n;
      for (int c = 0; c < n; ++c) {
        cur[c] += T(0.75) * (r0[c] + r1[c]);
        up[c] += T(0.25) * r0[c];
        dn[c] += T(0.25) * r1[c];
      }
    }
  }
  return gx;
}

template <typename T>
FeatureMap<T> concat_channels(const FeatureMap<T>& a, const FeatureMap<T>& b) {
  require(a.size == b.size, "cannot concatenate feature maps of different sizes");
  FeatureMap<T> out(a.channels + b.channels, a.size);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

}  // namespace detail

struct SynthesisConfig {
  std::vector<int> resolutions{8, 16, 32};
  int channels = 12;
  int depth_layers = 3;
  int latent_dim = 64;
  int backbone_channels = 32;

  int trigrid_channels() const { return kPlaneCount * depth_layers * channels; }

  void validate() const {
    detail::require(!resolutions.empty(), "synthesis needs at least one level");
    detail::require(resolutions[0] >= 2 && is_power_of_two(resolutions[0]), "first level must be a power of two >= 2");
    for (std::size_t i = 1; i < resolutions.size(); ++i)
      detail::require(resolutions[i] == 2 * resolutions[i - 1], "synthesis levels must ascend by factors of 2");
    detail::require(channels >= 1 && depth_layers >= 1 && latent_dim >= 1 && backbone_channels >= 1,
                    "synthesis sizes must be positive");
  }
};

/// Toy 3D-aware generator. Per layer l (tri-grid resolution r_l):
///   x_l    = SiLU(conv3x3_l(in_l))           in_0 = const input, in_l = up2(x_{l-1}); size r_l / 2
///   F2D_l  = head2d_l(x_l)                   1x1
///   F3D_l  = block3d_l(up2(F2D_l) ++ up2(F3D_{l-1}))   1x1, size r_l, 3*depth*channels outputs
/// F3D_l is reinterpreted as a tri-grid: channel q = (plane * depth + layer) * channels + c.
template <typename T>
struct SynthesisNetwork {
  SynthesisConfig config;
  FeatureMap<T> const_input;
  std::vector<ModulatedConv<T>> backbone;
  std::vector<ModulatedConv<T>> head2d;
  std::vector<ModulatedConv<T>> block3d;

  static SynthesisNetwork zeros(const SynthesisConfig& cfg) {
    cfg.validate();
    SynthesisNetwork net;
    net.config = cfg;
    const int c2 = cfg.backbone_channels;
    const int c3 = cfg.trigrid_channels();
    net.const_input = FeatureMap<T>(c2, cfg.resolutions[0] / 2);
    for (std::size_t l = 0; l < cfg.resolutions.size(); ++l) {
      net.backbone.push_back(ModulatedConv<T>::make(c2, c2, 3, cfg.latent_dim));
      net.head2d.push_back(ModulatedConv<T>::make(c2, c2, 1, cfg.latent_dim));
      net.block3d.push_back(ModulatedConv<T>::make(l == 0 ? c2 : c2 + c3, c3, 1, cfg.latent_dim));
    }
    return net;
  }

  static SynthesisNetwork random(const SynthesisConfig& cfg, std::uint64_t seed) {
    auto net = zeros(cfg);
    auto rng = make_rng(seed, 0x5e7);
    for (auto& v : net.const_input.data) v = static_cast<T>(standard_normal(rng));
    for (auto* group : {&net.backbone, &net.head2d, &net.block3d})
      for (auto& conv : *group) conv.randomize(rng, cfg.latent_dim);
    return net;
  }

  std::size_t parameter_count() const {
    std::size_t n = const_input.data.size();
    for (const auto* group : {&backbone, &head2d, &block3d})
      for (const auto& conv : *group) n += conv.parameter_count();
    return n;
  }

  template <typename U>
  SynthesisNetwork<U> cast() const {
    SynthesisNetwork<U> o;
    o.config = config;
    o.const_input = FeatureMap<U>(const_input.channels, const_input.size);
    o.const_input.data.assign(const_input.data.begin(), const_input.data.end());
    for (const auto& c : backbone) o.backbone.push_back(c.template cast<U>());
    for (const auto& c : head2d) o.head2d.push_back(c.template cast<U>());
    for (const auto& c : block3d) o.block3d.push_back(c.template cast<U>());
    return o;
  }
};

/// Forward activations kept for `synthesize_backward`.
template <typename T>
struct SynthesisTrace {
  std::vector<T> latent;
  struct Layer {
    FeatureMap<T> conv_in;
    FeatureMap<T> pre;  // before SiLU
    FeatureMap<T> x;
    FeatureMap<T> block_in;
    std::vector<T> s_backbone, s_head, s_block;
  };
  std::vector<Layer> layers;
};

/// T^pyr = G(w).
template <typename T>
PyramidTriGrid<T> synthesize(const SynthesisNetwork<T>& net, std::span<const T> w, SynthesisTrace<T>* trace = nullptr) {
  const auto& cfg = net.config;
  cfg.validate();
  detail::require(w.size() == static_cast<std::size_t>(cfg.latent_dim), "latent code dimension does not match network");
  for (T v : w) detail::require(std::isfinite(v), "latent code must be finite");
  detail::require(net.backbone.size() == cfg.resolutions.size() && net.head2d.size() == cfg.resolutions.size() &&
                      net.block3d.size() == cfg.resolutions.size(),
                  "network layer count does not match configured levels");
  detail::require(net.const_input.size == cfg.resolutions[0] / 2 && net.const_input.channels == cfg.backbone_channels,
                  "constant input shape does not match configuration");
  if (trace) {
    trace->latent.assign(w.begin(), w.end());
    trace->layers.clear();
  }

  std::vector<TriGrid<T>> levels;
  FeatureMap<T> x_prev, f3d_prev;
  for (std::size_t l = 0; l < cfg.resolutions.size(); ++l) {
    const int res = cfg.resolutions[l];
    FeatureMap<T> conv_in = l == 0 ? net.const_input : detail::upsample2(x_prev);
    const auto s_b = net.backbone[l].style(w);
    FeatureMap<T> pre = detail::modconv_forward(net.backbone[l], conv_in, std::span<const T>(s_b));
    FeatureMap<T> x = pre;
    for (auto& v : x.data) v = silu(v);
    const auto s_h = net.head2d[l].style(w);
    const FeatureMap<T> f2d = detail::modconv_forward(net.head2d[l], x, std::span<const T>(s_h));
    FeatureMap<T> block_in = l == 0 ? detail::upsample2(f2d)
                                    : detail::concat_channels(detail::upsample2(f2d), detail::upsample2(f3d_prev));
    const auto s_3 = net.block3d[l].style(w);
    FeatureMap<T> f3d = detail::modconv_forward(net.block3d[l], block_in, std::span<const T>(s_3));
    detail::require(f3d.size == res && f3d.channels == cfg.trigrid_channels(), "3D branch emitted the wrong shape");

    TriGrid<T> grid(res, cfg.channels, cfg.depth_layers);
    std::copy(f3d.data.begin(), f3d.data.end(), grid.values().begin());
    levels.push_back(std::move(grid));

    if (trace)
      trace->layers.push_back({std::move(conv_in), std::move(pre), x, std::move(block_in), s_b, s_h, s_3});
    x_prev = std::move(x);
    f3d_prev = std::move(f3d);
  }
  return PyramidTriGrid<T>(std::move(levels));
}

/// d loss / d w given d loss / d (pyramid values). Network weights are not differentiated.
template <typename T, typename A>
std::vector<T> synthesize_backward(const SynthesisNetwork<T>& net, const SynthesisTrace<T>& trace,
                                   const PyramidGradient<A>& grid_grad) {
  const auto& cfg = net.config;
  const std::size_t levels = cfg.resolutions.size();
  detail::require(trace.layers.size() == levels && grid_grad.levels.size() == levels,
                  "trace or gradient does not match the network");
  const int d = cfg.latent_dim;
  const int c2 = cfg.backbone_channels;
  std::vector<T> gw(d, T(0));
  auto add_style_grad = [&](const ModulatedConv<T>& conv, const std::vector<T>& gs) {
    for (int i = 0; i < conv.in; ++i) {
      if (gs[i] == T(0)) continue;
      for (int k = 0; k < d; ++k) gw[k] += conv.affine[static_cast<std::size_t>(i) * d + k] * gs[i];
    }
  };

  FeatureMap<T> g_f3d_carry;  // from block3d_{l+1}, already at resolution r_l
  FeatureMap<T> g_x_carry;    // from backbone_{l+1}, at size r_l / 2
  for (std::size_t li = levels; li-- > 0;) {
    const auto& layer = trace.layers[li];
    const int res = cfg.resolutions[li];
    FeatureMap<T> g_f3d(cfg.trigrid_channels(), res);
    detail::require(grid_grad.levels[li].size() == g_f3d.data.size(), "gradient level size mismatch");
    for (std::size_t i = 0; i < g_f3d.data.size(); ++i) g_f3d.data[i] = static_cast<T>(grid_grad.levels[li][i]);
    if (li + 1 < levels)
      for (std::size_t i = 0; i < g_f3d.data.size(); ++i) g_f3d.data[i] += g_f3d_carry.data[i];

    std::vector<T> gs3(net.block3d[li].in, T(0));
    const auto g_block_in =
        detail::modconv_backward(net.block3d[li], layer.block_in, std::span<const T>(layer.s_block), g_f3d, std::span<T>(gs3));
    add_style_grad(net.block3d[li], gs3);

    FeatureMap<T> g_up_f2d(c2, res);
    std::copy(g_block_in.data.begin(), g_block_in.data.begin() + g_up_f2d.data.size(), g_up_f2d.data.begin());
    if (li > 0) {
      FeatureMap<T> g_up_prev(cfg.trigrid_channels(), res);
      std::copy(g_block_in.data.begin() + g_up_f2d.data.size(), g_block_in.data.end(), g_up_prev.data.begin());
      g_f3d_carry = detail::upsample2_adjoint(g_up_prev);
    }
    const auto g_f2d = detail::upsample2_adjoint(g_up_f2d);

    std::vector<T> gsh(c2, T(0));
    auto g_x = detail::modconv_backward(net.head2d[li], layer.x, std::span<const T>(layer.s_head), g_f2d, std::span<T>(gsh));
    add_style_grad(net.head2d[li], gsh);
    if (li + 1 < levels)
      for (std::size_t i = 0; i < g_x.data.size(); ++i) g_x.data[i] += g_x_carry.data[i];

    FeatureMap<T> g_pre = g_x;
    for (std::size_t i = 0; i < g_pre.data.size(); ++i) g_pre.data[i] *= silu_grad(layer.pre.data[i]);
    std::vector<T> gsb(c2, T(0));
    const auto g_in = detail::modconv_backward(net.backbone[li], layer.conv_in, std::span<const T>(layer.s_backbone),
                                               g_pre, std::span<T>(gsb));
    add_style_grad(net.backbone[li], gsb);
    if (li > 0) g_x_carry = detail::upsample2_adjoint(g_in);
  }
  return gw;
}

}  // namespace pyrtri
