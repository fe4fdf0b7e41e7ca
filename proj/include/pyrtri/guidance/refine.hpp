#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pyrtri/core/random.hpp"
#include "pyrtri/diff/adam.hpp"
#include "pyrtri/diff/backward.hpp"
#include "pyrtri/guidance/cameras.hpp"
#include "pyrtri/guidance/provider.hpp"
#include "pyrtri/render/renderer.hpp"

namespace pyrtri {

struct RefineConfig {
  double noise_level = 0.4;
  std::vector<CameraPose> views;  // empty: the 21-view protocol around `camera`
  CameraPose camera{};
  int steps = 200;
  int views_per_step = 3;
  double learning_rate = 0.01;
  std::string prompt;
  std::uint64_t seed = 0;
  int min_views = 8;
  RenderOptions render{};

  void validate() const {
    detail::require(noise_level >= 0.0 && noise_level < 1.0, "refine noise level must lie in [0, 1)");
    detail::require(steps >= 0, "refine step count must be non-negative");
    detail::require(views_per_step >= 1, "views_per_step must be at least 1");
    detail::require(learning_rate > 0.0, "refine learning rate must be positive");
    detail::require(min_views >= 1, "min_views must be at least 1");
    camera.validate();
    render.validate();
  }

  std::vector<CameraPose> resolved_views() const { return views.empty() ? protocol_21_views(camera, seed) : views; }
};

class RefineAborted : public Error {
 public:
  using Error::Error;
};

struct RefineResult {
  std::vector<CameraPose> views;
  std::vector<int> used_views;      // indices into views
  std::vector<int> excluded_views;
  std::vector<std::string> warnings;
  std::vector<double> initial_view_losses;  // per used view
  std::vector<double> final_view_losses;
  double initial_mean_loss = 0.0;
  double final_mean_loss = 0.0;
};

inline std::uint64_t refine_render_seed(std::uint64_t seed, std::size_t view) { return mix_seed(seed, 0x7e0000 + view); }

/// Mean squared error of the render of every listed view against its target.
template <typename T>
std::vector<double> multiview_losses(const PyramidTriGrid<T>& pyr, const NeuralRenderer<T>& renderer,
                                     std::span<const T> w, const std::vector<CameraPose>& views,
                                     const std::vector<Image<double>>& targets, const std::vector<int>& indices,
                                     std::uint64_t seed, const RenderOptions& opts) {
  std::vector<double> out;
  for (int v : indices) {
    const auto img = render(pyr, renderer, views[v], w, refine_render_seed(seed, v), opts);
    const auto& y = targets[v];
    detail::require(y.height == img.rgb.height && y.width == img.rgb.width && y.channels == 3, "refine target does not match the render shape");
    double s = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      const double d = double(img.rgb.data[i]) - y.data[i];
      s += d * d;
    }
    out.push_back(s / y.data.size());
  }
  return out;
}

/// Denoised targets for every view; views whose provider call fails are left empty.
template <typename T>
std::vector<Image<double>> refine_targets(const PyramidTriGrid<T>& pyr, const NeuralRenderer<T>& renderer,
                                          std::span<const T> w, GuidanceProvider& provider,
                                          const std::vector<CameraPose>& views, const RefineConfig& cfg,
                                          RefineResult& result) {
  std::vector<Image<double>> targets(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto img = render(pyr, renderer, views[v], w, refine_render_seed(cfg.seed, v), cfg.render);
    Image<double> noisy = img.rgb.template cast<double>();
    if (cfg.noise_level > 0.0) {
      auto rng = make_rng(cfg.seed, 0x40150000 + v);
      for (auto& x : noisy.data) x += cfg.noise_level * standard_normal(rng);
    }
    try {
      auto y = provider.denoise(noisy, cfg.noise_level, {cfg.prompt, mix_seed(cfg.seed, v), views[v]});
      if (!y.same_shape(noisy)) throw TransportError("denoised image has the wrong shape");
      detail::require_finite(y, "denoiser produced non-finite values");
      targets[v] = std::move(y);
      result.used_views.push_back(static_cast<int>(v));
    } catch (const ProviderError& e) {
      result.excluded_views.push_back(static_cast<int>(v));
      result.warnings.push_back("view " + std::to_string(v) + " excluded: " + e.what());
    }
  }
  return targets;
}

/// Denoise the rendered views once, then fit the pyramid to the refined images by L2.
/// Each step uses views_per_step views in a fixed cyclic order over the usable views.
template <typename T>
RefineResult refine(PyramidTriGrid<T>& pyr, const NeuralRenderer<T>& renderer, std::span<const T> w,
                    GuidanceProvider& provider, const RefineConfig& cfg) {
  cfg.validate();
  RefineResult result;
  result.views = cfg.resolved_views();
  const auto targets = refine_targets(pyr, renderer, w, provider, result.views, cfg, result);
  if (static_cast<int>(result.used_views.size()) < cfg.min_views)
    throw RefineAborted("only " + std::to_string(result.used_views.size()) + " usable views, need at least " +
                        std::to_string(cfg.min_views));

  const auto& used = result.used_views;
  result.initial_view_losses = multiview_losses(pyr, renderer, w, result.views, targets, used, cfg.seed, cfg.render);
  PyramidAdam<T> opt(pyr);
  std::size_t cursor = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    auto total = PyramidGradient<T>::zeros_like(pyr);
    for (int k = 0; k < cfg.views_per_step; ++k) {
      const int v = used[cursor++ % used.size()];
      RenderTape<T> tape;
      const auto img = render(pyr, renderer, result.views[v], w, refine_render_seed(cfg.seed, v), cfg.render, &tape);
      const auto& y = targets[v];
      Image<T> upstream(img.rgb.height, img.rgb.width, 3);
      const double scale = 2.0 / y.data.size();
      for (std::size_t i = 0; i < y.data.size(); ++i)
        upstream.data[i] = static_cast<T>(scale * (double(img.rgb.data[i]) - y.data[i]));
      total += render_backward(tape, upstream, cfg.render.exec).grid;
    }
    opt.step(pyr, total, cfg.learning_rate);
  }
  result.final_view_losses = multiview_losses(pyr, renderer, w, result.views, targets, used, cfg.seed, cfg.render);
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
  };
  result.initial_mean_loss = mean(result.initial_view_losses);
  result.final_mean_loss = mean(result.final_view_losses);
  return result;
}

}  // namespace pyrtri
