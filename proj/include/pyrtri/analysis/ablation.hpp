#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "pyrtri/analysis/metrics.hpp"
#include "pyrtri/analysis/spectrum.hpp"
#include "pyrtri/core/random.hpp"
#include "pyrtri/diff/fit.hpp"
#include "pyrtri/guidance/cameras.hpp"
#include "pyrtri/render/renderer.hpp"

namespace pyrtri {

struct AblationConfig {
  std::vector<int> pyramid_resolutions{8, 16, 32};  // the single-resolution arm uses the last entry
  int channels = 8;
  int hidden = 32;
  int color_features = 4;
  int latent_dim = 8;
  int image_size = 32;
  double noise = 0.2;  // supervision noise std of the noisy arm pair
  double spectrum_cutoff = 0.25;
  FitConfig fit{};

  AblationConfig() {
    fit.steps = 400;
    fit.rays_per_step = 256;
    fit.learning_rate = 0.02;
    fit.render.samples_per_ray = 24;
  }
};

struct AblationArm {
  std::string representation;
  std::vector<int> resolutions;
  double high_band_ratio = 0.0;  // mean over the evaluation views
  double psnr_to_clean = 0.0;    // mean over the evaluation views
  double final_batch_loss = 0.0;
};

struct AblationReport {
  std::uint64_t seed = 0;
  double noise = 0.0;
  FitConfig fit;          // identical for both arms
  bool configs_match = false;
  AblationArm single;
  AblationArm pyramid;

  std::string to_csv() const;
};

namespace detail {

/// Smooth ground-truth scene: random coarse features on the lowest level only.
template <typename T>
PyramidTriGrid<T> ablation_teacher(const AblationConfig& cfg, std::uint64_t seed) {
  PyramidTriGrid<T> t(std::span<const int>(cfg.pyramid_resolutions), cfg.channels);
  auto rng = make_rng(seed, 0xab1);
  for (auto& v : t.level(0).values()) v = static_cast<T>(standard_normal(rng));
  return t;
}

}  // namespace detail

/// Matched fits of a single-resolution grid and a pyramid to the same posed views of a smooth scene.
/// Both arms share renderer, targets, supervision noise draws, optimizer and step budget; only the
/// representation differs. Returns the spectral high-band ratio of each arm's renders.
inline AblationReport artifact_ablation(std::uint64_t seed, const AblationConfig& cfg = {}) {
  detail::require(!cfg.pyramid_resolutions.empty(), "ablation needs pyramid resolutions");
  auto renderer = NeuralRenderer<float>::random(cfg.channels, cfg.latent_dim, mix_seed(seed, 1), cfg.hidden,
                                                cfg.color_features);
  renderer.decoder.b2[0] = renderer.decoder.density_shift - 1.0f;
  std::vector<float> w(cfg.latent_dim);
  auto rng = make_rng(seed, 0xab2);
  for (auto& v : w) v = static_cast<float>(0.5 * standard_normal(rng));

  CameraPose base;
  base.image_size = cfg.image_size;
  const auto train = protocol_21_views(base, mix_seed(seed, 2));
  const auto eval = turntable(base, 8);
  RenderOptions clean = cfg.fit.render;
  clean.jitter = false;
  const auto teacher = detail::ablation_teacher<float>(cfg, seed);
  auto render_all = [&](const PyramidTriGrid<float>& pyr, const std::vector<CameraPose>& views) {
    std::vector<Image<float>> out;
    for (const auto& c : views) out.push_back(render(pyr, renderer, c, std::span<const float>(w), 0, clean).rgb);
    return out;
  };
  const auto targets = render_all(teacher, train);
  const auto eval_clean = render_all(teacher, eval);

  FitConfig fit = cfg.fit;
  fit.supervision_noise = cfg.noise;
  fit.seed = mix_seed(seed, 3);

  auto run_arm = [&](const std::string& name, const std::vector<int>& res) {
    AblationArm arm;
    arm.representation = name;
    arm.resolutions = res;
    PyramidTriGrid<float> pyr(std::span<const int>(res), cfg.channels);
    const auto r = fit_views(pyr, renderer, std::span<const float>(w), train, targets, fit);
    arm.final_batch_loss = r.loss_trace.empty() ? 0.0 : r.loss_trace.back();
    const auto renders = render_all(pyr, eval);
    for (std::size_t i = 0; i < renders.size(); ++i) {
      arm.high_band_ratio += power_spectrum(renders[i], cfg.spectrum_cutoff).high_band_ratio / renders.size();
      arm.psnr_to_clean += psnr(renders[i], eval_clean[i]) / renders.size();
    }
    return std::make_pair(arm, fit);
  };

  AblationReport rep;
  rep.seed = seed;
  rep.noise = cfg.noise;
  const auto [single, single_fit] = run_arm("single", {cfg.pyramid_resolutions.back()});
  const auto [pyramid, pyramid_fit] = run_arm("pyramid", cfg.pyramid_resolutions);
  rep.single = single;
  rep.pyramid = pyramid;
  rep.fit = fit;
  rep.configs_match = single_fit == pyramid_fit;
  return rep;
}

inline std::string AblationReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "# seed=" << seed << " noise=" << noise << " steps=" << fit.steps << " rays_per_step=" << fit.rays_per_step
      << " learning_rate=" << fit.learning_rate << " samples_per_ray=" << fit.render.samples_per_ray
      << " adam=" << fit.adam.beta1 << '/' << fit.adam.beta2 << '/' << fit.adam.epsilon
      << " level_lr_gamma=" << fit.level_lr.gamma << " configs_match=" << (configs_match ? 1 : 0) << '\n';
  out << "representation,resolutions,high_band_ratio,psnr_to_clean,final_batch_loss\n";
  for (const auto* arm : {&single, &pyramid}) {
    out << arm->representation << ',';
    for (std::size_t i = 0; i < arm->resolutions.size(); ++i) out << (i ? ";" : "") << arm->resolutions[i];
    out << ',' << arm->high_band_ratio << ',' << arm->psnr_to_clean << ',' << arm->final_batch_loss << '\n';
  }
  return out.str();
}

}  // namespace pyrtri
