#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/image.hpp"
#include "pyrtri/core/parallel.hpp"
#include "pyrtri/core/trigrid.hpp"
#include "pyrtri/render/renderer.hpp"

namespace pyrtri {

/// Gradients of a scalar loss with respect to the optimizable inputs of a render.
/// Decoder and ToRGB weights are frozen and never receive gradients.
template <typename A>
struct RenderGradients {
  PyramidGradient<A> grid;
  std::vector<A> latent;
};

/// Exact adjoint of the recorded forward pass.
/// `upstream_rgb` holds d loss / d rgb with the same layout as the rendered image.
/// `A` is the accumulation type for the grid gradient (float in production, double for checks).
template <typename T, typename A = T>
RenderGradients<A> render_backward(const RenderTape<T>& tape, const Image<T>& upstream_rgb, Execution exec = {}) {
  detail::require(tape.pyramid != nullptr && tape.renderer != nullptr, "tape has not been recorded");
  detail::require(upstream_rgb.same_shape(tape.output.rgb), "upstream gradient shape does not match the rendered image");

  const auto& pyr = *tape.pyramid;
  const auto& dec = tape.renderer->decoder;
  const auto& trgb = tape.renderer->to_rgb;
  const int k = dec.color_features;
  const int channels = pyr.channels();
  const int n = tape.samples_per_ray();
  const int latent_dim = trgb.latent_dim;
  const std::size_t ray_count = tape.rays.size();
  detail::require(tape.sample_count() == ray_count * n, "tape sample count is inconsistent");

  const std::size_t workers = worker_count(ray_count, exec);
  std::vector<PyramidGradient<A>> grid_parts(workers);
  std::vector<std::vector<A>> scale_parts(workers, std::vector<A>(k, A(0)));
  for (auto& g : grid_parts) g = PyramidGradient<A>::zeros_like(pyr);

  parallel_for(ray_count, exec, [&](std::size_t begin, std::size_t end, std::size_t worker) {
    auto& grid_grad = grid_parts[worker];
    auto& scale_grad = scale_parts[worker];
    std::vector<T> g_feature(k), g_color(k), e(n), g_features(channels);
    std::vector<T> scratch_out(dec.out_size()), scratch_hidden(dec.hidden);
    for (std::size_t r = begin; r < end; ++r) {
      const auto feature = tape.output.feature.pixel(r);
      const T weight_sum = tape.output.weight_sum.data[r];
      const auto pre = to_rgb_preclamp(trgb, std::span<const T>(tape.scales), feature, weight_sum);

      // ToRGB: clamp passes gradient on the closed interval [0, 1].
      T g_pre[3];
      bool any = false;
      for (int c = 0; c < 3; ++c) {
        const T g = upstream_rgb.data[r * 3 + c];
        g_pre[c] = (pre[c] >= T(0) && pre[c] <= T(1)) ? g : T(0);
        any = any || g_pre[c] != T(0);
      }
      if (!any) continue;
      T g_weight_sum = T(0);
      for (int c = 0; c < 3; ++c) g_weight_sum += g_pre[c] * (trgb.bias[c] - trgb.background[c]);
      for (int j = 0; j < k; ++j) {
        T mt = T(0);
        for (int c = 0; c < 3; ++c) mt += trgb.linear[c * k + j] * g_pre[c];
        g_feature[j] = tape.scales[j] * mt;
        scale_grad[j] += static_cast<A>(feature[j] * mt);
      }

      // Compositing: F = sum w_i c_i, W = sum w_i, w_i = T_i alpha_i.
      const std::size_t base = r * n;
      for (int s = 0; s < n; ++s) {
        const T* c = &tape.color[(base + s) * k];
        T acc = g_weight_sum;
        for (int j = 0; j < k; ++j) acc += g_feature[j] * c[j];
        e[s] = acc;
      }
      T suffix = T(0);  // sum over j > s of w_j e_j
      for (int s = n - 1; s >= 0; --s) {
        const std::size_t q = base + s;
        const T w = tape.transmittance[q] * tape.alpha[q];
        const T trans_next = tape.transmittance[q] * std::exp(-tape.sigma[q] * tape.delta[q]);
        const T g_sigma = tape.delta[q] * (trans_next * e[s] - suffix);
        suffix += w * e[s];
        for (int j = 0; j < k; ++j) g_color[j] = w * g_feature[j];

        decode_backward(dec, std::span<const T>(&tape.hidden_pre[q * dec.hidden], dec.hidden),
                        std::span<const T>(&tape.out_pre[q * dec.out_size()], dec.out_size()), g_sigma,
                        std::span<const T>(g_color), std::span<T>(g_features), std::span<T>(scratch_out),
                        std::span<T>(scratch_hidden));
        accumulate_query_pyramid_grad(pyr, tape.points[q], std::span<const T>(g_features), grid_grad);
      }
    }
  });

  RenderGradients<A> out;
  out.grid = std::move(grid_parts[0]);
  for (std::size_t w = 1; w < workers; ++w) out.grid += grid_parts[w];
  std::vector<A> g_scales(k, A(0));
  for (const auto& part : scale_parts)
    for (int j = 0; j < k; ++j) g_scales[j] += part[j];
  out.latent.assign(latent_dim, A(0));
  for (int d = 0; d < latent_dim; ++d)
    for (int j = 0; j < k; ++j)
      out.latent[d] += static_cast<A>(trgb.affine[static_cast<std::size_t>(j) * latent_dim + d]) * g_scales[j];
  return out;
}

}  // namespace pyrtri
