#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>

#include "pyrtri/core/random.hpp"
#include "pyrtri/diff/adam.hpp"
#include "pyrtri/diff/backward.hpp"
#include "pyrtri/guidance/cameras.hpp"
#include "pyrtri/guidance/provider.hpp"
#include "pyrtri/render/renderer.hpp"

namespace pyrtri {

enum class SdsWeighting {
  Constant,  // omega(t) = weight
  Variance,  // omega(t) = weight * (1 - alpha_bar(t))
};

struct SdsConfig {
  double t_min = 0.02;
  double t_max = 0.98;
  SdsWeighting weighting = SdsWeighting::Constant;
  double weight = 1.0;
  int steps = 2000;
  double learning_rate = 0.01;
  std::string prompt;
  std::uint64_t seed = 0;
  int max_retries = 3;
  CameraPose camera{};  // radius, fov and image size for the sampled views
  RenderOptions render{};

  void validate() const {
    detail::require(0.0 <= t_min && t_min < t_max && t_max <= 1.0, "SDS needs 0 <= t_min < t_max <= 1");
    detail::require(weight >= 0.0 && std::isfinite(weight), "SDS weight must be non-negative");
    detail::require(steps >= 0, "SDS step count must be non-negative");
    detail::require(learning_rate > 0.0, "SDS learning rate must be positive");
    detail::require(max_retries >= 0, "max_retries must be non-negative");
    camera.validate();
    render.validate();
  }

  double omega(double t) const {
    return weighting == SdsWeighting::Constant ? weight : weight * (1.0 - cosine_alpha_bar(t));
  }
};

/// Random draws of one SDS step; a function of (seed, step) only.
struct SdsSample {
  CameraPose camera;
  double timestep = 0.0;
  std::uint64_t render_seed = 0;
  std::uint64_t noise_seed = 0;
};

inline SdsSample sds_sample(const SdsConfig& cfg, long step_index) {
  auto rng = make_rng(cfg.seed, mix_seed(static_cast<std::uint64_t>(step_index), 0x5d5));
  SdsSample s;
  s.camera = sample_band_camera(cfg.camera, rng);
  // t_max = 1 would make alpha_bar 0; keep the draw strictly inside
  s.timestep = std::min(uniform(rng, cfg.t_min, cfg.t_max), 1.0 - 1e-6);
  s.render_seed = rng();
  s.noise_seed = rng();
  return s;
}

/// Standard normal noise rounded to float32 so it survives the wire protocol bit-exactly.
inline Image<double> sample_noise(int h, int w, int c, std::uint64_t seed) {
  auto rng = make_rng(seed);
  Image<double> eps(h, w, c);
  for (auto& v : eps.data) v = static_cast<double>(static_cast<float>(standard_normal(rng)));
  return eps;
}

struct SdsDiagnostics {
  long step = 0;
  CameraPose camera;
  double timestep = 0.0;
  double alpha_bar = 1.0;
  double omega = 0.0;
  double residual_rms = 0.0;  // rms of eps-hat - eps
  bool applied = false;       // false when the optimizer skipped a non-finite gradient
};

/// One score-distillation step. Only `pyr` (and the optimizer state) change; the renderer
/// and latent are read-only. A provider failure throws before any parameter is touched.
template <typename T>
SdsDiagnostics sds_step(PyramidTriGrid<T>& pyr, PyramidAdam<T>& opt, const NeuralRenderer<T>& renderer,
                        std::span<const T> w, GuidanceProvider& provider, const SdsConfig& cfg, long step_index) {
  cfg.validate();
  const SdsSample s = sds_sample(cfg, step_index);
  SdsDiagnostics diag;
  diag.step = step_index;
  diag.camera = s.camera;
  diag.timestep = s.timestep;
  diag.alpha_bar = cosine_alpha_bar(s.timestep);
  diag.omega = cfg.omega(s.timestep);

  RenderTape<T> tape;
  const auto img = render(pyr, renderer, s.camera, w, s.render_seed, cfg.render, &tape);
  const Image<double> x = img.rgb.template cast<double>();
  const Image<double> z0 = provider.encode(x);
  detail::require_finite(z0, "encoder produced non-finite values");

  NoiseQuery q;
  q.noise = sample_noise(z0.height, z0.width, z0.channels, s.noise_seed);
  q.timestep = s.timestep;
  q.alpha_bar = diag.alpha_bar;
  q.cond = {cfg.prompt, mix_seed(cfg.seed, static_cast<std::uint64_t>(step_index)), s.camera};
  const double a = std::sqrt(diag.alpha_bar);
  const double b = std::sqrt(1.0 - diag.alpha_bar);
  q.z_t = Image<double>(z0.height, z0.width, z0.channels);
  for (std::size_t i = 0; i < z0.data.size(); ++i) q.z_t.data[i] = a * z0.data[i] + b * q.noise.data[i];

  const Image<double> eps_hat = provider.predict_noise(q);
  if (!eps_hat.same_shape(q.noise)) throw TransportError("predicted noise has the wrong shape");

  Image<double> g_z(z0.height, z0.width, z0.channels);
  double sq = 0.0;
  for (std::size_t i = 0; i < g_z.data.size(); ++i) {
    const double r = eps_hat.data[i] - q.noise.data[i];
    sq += r * r;
    g_z.data[i] = diag.omega * r;
  }
  diag.residual_rms = g_z.data.empty() ? 0.0 : std::sqrt(sq / g_z.data.size());
  const Image<double> g_x = provider.encode_adjoint(g_z, x);
  detail::require(g_x.same_shape(x), "encoder adjoint returned the wrong shape");

  const auto grads = render_backward(tape, g_x.template cast<T>(), cfg.render.exec);
  diag.applied = opt.step(pyr, grads.grid, cfg.learning_rate);
  return diag;
}

struct SdsRunResult {
  std::vector<SdsDiagnostics> steps;
  long retries = 0;
  long skipped = 0;
};

/// cfg.steps SDS steps starting at `first_step`. Retriable provider failures are retried up to
/// cfg.max_retries times per step; the step index (and so its random draws) is unchanged on retry.
template <typename T>
SdsRunResult sds_run(PyramidTriGrid<T>& pyr, PyramidAdam<T>& opt, const NeuralRenderer<T>& renderer,
                     std::span<const T> w, GuidanceProvider& provider, const SdsConfig& cfg, long first_step = 0) {
  SdsRunResult out;
  for (long i = first_step; i < first_step + cfg.steps; ++i) {
    for (int attempt = 0;; ++attempt) {
      try {
        out.steps.push_back(sds_step(pyr, opt, renderer, w, provider, cfg, i));
        if (!out.steps.back().applied) ++out.skipped;
        break;
      } catch (const ProviderError& e) {
        if (!e.retriable() || attempt >= cfg.max_retries) throw;
        ++out.retries;
      }
    }
  }
  return out;
}

}  // namespace pyrtri
