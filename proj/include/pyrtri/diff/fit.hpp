#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/image.hpp"
#include "pyrtri/core/random.hpp"
#include "pyrtri/diff/adam.hpp"
#include "pyrtri/diff/backward.hpp"
#include "pyrtri/render/renderer.hpp"

namespace pyrtri {

struct FitConfig {
  int steps = 2000;
  int rays_per_step = 512;  // drawn uniformly over every (view, pixel) pair
  double learning_rate = 0.02;
  double supervision_noise = 0.0;  // std of fresh Gaussian noise added to the targets each step
  std::uint64_t seed = 0;
  AdamConfig adam{};
  LevelLrPolicy level_lr{};
  RenderOptions render{};

  void validate() const {
    detail::require(steps >= 0, "fit step count must be non-negative");
    detail::require(rays_per_step >= 1, "rays_per_step must be at least 1");
    detail::require(learning_rate > 0.0, "fit learning rate must be positive");
    detail::require(supervision_noise >= 0.0, "supervision noise must be non-negative");
    render.validate();
  }

  bool operator==(const FitConfig& o) const {
    return steps == o.steps && rays_per_step == o.rays_per_step && learning_rate == o.learning_rate &&
           supervision_noise == o.supervision_noise && seed == o.seed && adam.beta1 == o.adam.beta1 &&
           adam.beta2 == o.adam.beta2 && adam.epsilon == o.adam.epsilon && level_lr.gamma == o.level_lr.gamma &&
           level_lr.reference_resolution == o.level_lr.reference_resolution &&
           render.samples_per_ray == o.render.samples_per_ray && render.jitter == o.render.jitter &&
           render.bound_margin == o.render.bound_margin;
  }
};

struct FitResult {
  std::vector<double> loss_trace;  // batch MSE before each step
  long skipped_steps = 0;
};

/// Fits the pyramid to posed RGB images by Adam on the batch MSE. Renderer and latent stay fixed.
/// All views must share near/far bounds (same radius) so rays from several views fit one batch.
template <typename T>
FitResult fit_views(PyramidTriGrid<T>& pyr, const NeuralRenderer<T>& renderer, std::span<const T> w,
                    const std::vector<CameraPose>& views, const std::vector<Image<T>>& targets, const FitConfig& cfg) {
  cfg.validate();
  detail::require(views.size() >= 2, "need >= 2 views");
  detail::require(views.size() == targets.size(), "pose count does not match image count");
  RayBatch all;
  for (std::size_t v = 0; v < views.size(); ++v) {
    detail::require(targets[v].channels == 3 && targets[v].height == views[v].image_size &&
                        targets[v].width == views[v].image_size,
                    "target image " + std::to_string(v) + " does not match its camera");
    auto rays = camera_rays(views[v], cfg.render.bound_margin);
    if (v == 0) {
      all.near = rays.near;
      all.far = rays.far;
    }
    detail::require(rays.near == all.near && rays.far == all.far, "all fit views must share near/far bounds");
    all.origins.insert(all.origins.end(), rays.origins.begin(), rays.origins.end());
    all.directions.insert(all.directions.end(), rays.directions.begin(), rays.directions.end());
  }
  all.height = 1;
  all.width = static_cast<int>(all.origins.size());
  std::vector<const T*> pixel;
  for (const auto& t : targets)
    for (std::size_t i = 0; i < t.pixel_count(); ++i) pixel.push_back(&t.data[i * 3]);

  FitResult result;
  PyramidAdam<T> opt(pyr, cfg.adam, cfg.level_lr);
  auto rng = make_rng(cfg.seed, 0xf17);
  const std::size_t batch = std::min<std::size_t>(cfg.rays_per_step, all.size());
  std::vector<std::size_t> idx(batch);
  for (int step = 0; step < cfg.steps; ++step) {
    for (auto& i : idx) i = static_cast<std::size_t>(uniform01(rng) * all.size()) % all.size();
    const RayBatch rays = all.select(idx);
    RenderTape<T> tape;
    const auto img = render_rays(pyr, renderer, rays, w, rng(), cfg.render, &tape);
    Image<T> upstream(1, static_cast<int>(batch), 3);
    double loss = 0.0;
    const double scale = 2.0 / (3.0 * batch);
    for (std::size_t r = 0; r < batch; ++r)
      for (int c = 0; c < 3; ++c) {
        double y = pixel[idx[r]][c];
        if (cfg.supervision_noise > 0.0) y += cfg.supervision_noise * standard_normal(rng);
        const double d = double(img.rgb.data[r * 3 + c]) - y;
        loss += d * d;
        upstream.data[r * 3 + c] = static_cast<T>(scale * d);
      }
    result.loss_trace.push_back(loss / (3.0 * batch));
    opt.step(pyr, render_backward(tape, upstream, cfg.render.exec).grid, cfg.learning_rate);
  }
  result.skipped_steps = opt.skipped_steps();
  return result;
}

}  // namespace pyrtri
