#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "pyrtri/core/random.hpp"
#include "pyrtri/diff/backward.hpp"
#include "pyrtri/render/renderer.hpp"

namespace pyrtri {

/// Small double-precision scene for finite-difference checks.
struct GradcheckScene {
  PyramidTriGrid<double> pyramid;
  NeuralRenderer<double> renderer;
  CameraPose camera;
  std::vector<double> latent;
  RenderOptions options;
  std::uint64_t render_seed = 0;
};

struct GradcheckSceneConfig {
  std::vector<int> resolutions{2, 4};
  int channels = 4;
  int image_size = 4;
  int samples_per_ray = 8;
  int latent_dim = 8;
  int hidden = 16;
  int color_features = 4;
  bool zero_density = false;
};

/// Random grid values, gray background and a density bias that cancels the decoder's
/// activation offset so densities are O(1). `zero_density` pushes the offset far enough
/// that the scene is numerically empty.
inline GradcheckScene make_gradcheck_scene(std::uint64_t seed, const GradcheckSceneConfig& cfg = {}) {
  GradcheckScene scene;
  scene.pyramid = PyramidTriGrid<double>(std::span<const int>(cfg.resolutions), cfg.channels);
  auto rng = make_rng(seed, 0x9c);
  for (auto& level : scene.pyramid.levels())
    for (auto& v : level.values()) v = 0.5 * standard_normal(rng);
  scene.renderer = NeuralRenderer<double>::random(cfg.channels, cfg.latent_dim, mix_seed(seed, 2), cfg.hidden,
                                                  cfg.color_features);
  scene.renderer.decoder.b2[0] = scene.renderer.decoder.density_shift;
  if (cfg.zero_density) scene.renderer.decoder.density_shift = 80.0;
  scene.renderer.to_rgb.background = {0.5, 0.5, 0.5};
  for (auto& v : scene.renderer.to_rgb.linear) v *= 0.5;
  for (auto& v : scene.renderer.to_rgb.affine) v *= 5.0;
  scene.latent.resize(cfg.latent_dim);
  for (auto& v : scene.latent) v = standard_normal(rng);
  scene.camera = CameraPose{uniform(rng, 0.0, 360.0), uniform(rng, 60.0, 120.0), 2.7, 30.0, cfg.image_size};
  scene.options.samples_per_ray = cfg.samples_per_ray;
  scene.options.exec = Execution::deterministic();
  scene.render_seed = mix_seed(seed, 3);
  return scene;
}

struct GradcheckReport {
  double max_rel_error = 0.0;
  double threshold = 1e-3;
  bool passed = true;
  std::size_t checked = 0;
  std::string location;  // worst entry, e.g. "level 1 (resolution 4) plane XZ layer 0 channel 2 row 1 col 3"
  int level = -1;        // worst grid level, -1 when the worst entry is a latent component
  long latent_index = -1;
};

using AnalyticGradient = std::function<RenderGradients<double>(const GradcheckScene&, const Image<double>& upstream)>;

inline RenderGradients<double> analytic_render_gradient(const GradcheckScene& scene, const Image<double>& upstream) {
  RenderTape<double> tape;
  render(scene.pyramid, scene.renderer, scene.camera, std::span<const double>(scene.latent), scene.render_seed,
         scene.options, &tape);
  return render_backward<double, double>(tape, upstream);
}

namespace detail {

inline double weighted_sum(const Image<double>& a, const Image<double>& u) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * u.data[i];
  return s;
}

inline std::string describe_entry(const TriGrid<double>& grid, std::size_t level, std::size_t index) {
  static const char* kPlanes[] = {"XY", "XZ", "YZ"};
  const auto cs = grid.channel_stride();
  const int col = static_cast<int>(index % grid.resolution());
  const int row = static_cast<int>((index / grid.resolution()) % grid.resolution());
  const int channel = static_cast<int>((index / cs) % grid.channels());
  const int layer = static_cast<int>((index / grid.layer_stride()) % grid.depth_layers());
  const int plane = static_cast<int>(index / grid.plane_stride());
  std::ostringstream os;
  os << "level " << level << " (resolution " << grid.resolution() << ") plane " << kPlanes[plane] << " layer "
     << layer << " channel " << channel << " row " << row << " col " << col;
  return os.str();
}

}  // namespace detail

/// Relative error with an absolute floor so entries where both gradients vanish pass.
inline double gradient_relative_error(double analytic, double numeric, double abs_floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares analytic gradients of L = <u, rgb> (u seeded Gaussian) against central
/// differences for every grid entry and latent component.
inline GradcheckReport gradcheck(const GradcheckScene& scene, std::uint64_t seed, double step = 1e-3,
                                 double threshold = 1e-3, const AnalyticGradient& analytic = analytic_render_gradient) {
  const int n = scene.camera.image_size;
  Image<double> upstream(n, n, 3);
  auto rng = make_rng(seed, 0x0c);
  for (auto& v : upstream.data) v = standard_normal(rng);

  const auto grads = analytic(scene, upstream);
  GradcheckReport report;
  report.threshold = threshold;

  GradcheckScene probe = scene;
  auto loss = [&]() {
    return detail::weighted_sum(render(probe.pyramid, probe.renderer, probe.camera,
                                       std::span<const double>(probe.latent), probe.render_seed, probe.options)
                                    .rgb,
                                upstream);
  };
  auto consider = [&](double a, double f, auto&& where) {
    const double e = gradient_relative_error(a, f);
    ++report.checked;
    if (e > report.max_rel_error || report.location.empty()) {
      report.max_rel_error = std::max(report.max_rel_error, e);
      where();
    }
  };

  for (std::size_t l = 0; l < probe.pyramid.level_count(); ++l) {
    auto values = probe.pyramid.level(l).values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss();
      values[i] = saved - step;
      const double down = loss();
      values[i] = saved;
      consider(grads.grid.levels.at(l).at(i), (up - down) / (2.0 * step), [&] {
        report.level = static_cast<int>(l);
        report.latent_index = -1;
        report.location = detail::describe_entry(probe.pyramid.level(l), l, i);
      });
    }
  }
  for (std::size_t d = 0; d < probe.latent.size(); ++d) {
    const double saved = probe.latent[d];
    probe.latent[d] = saved + step;
    const double up = loss();
    probe.latent[d] = saved - step;
    const double down = loss();
    probe.latent[d] = saved;
    consider(grads.latent.at(d), (up - down) / (2.0 * step), [&] {
      report.level = -1;
      report.latent_index = static_cast<long>(d);
      report.location = "latent[" + std::to_string(d) + "]";
    });
  }
  report.passed = report.max_rel_error <= threshold;
  return report;
}

}  // namespace pyrtri
