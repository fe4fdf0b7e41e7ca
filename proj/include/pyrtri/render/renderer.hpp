#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <vector>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/image.hpp"
#include "pyrtri/core/parallel.hpp"
#include "pyrtri/core/random.hpp"
#include "pyrtri/core/trigrid.hpp"
#include "pyrtri/render/camera.hpp"
#include "pyrtri/render/decoder.hpp"
#include "pyrtri/render/to_rgb.hpp"

namespace pyrtri {

struct RenderOptions {
  int samples_per_ray = 96;
  bool jitter = true;
  double bound_margin = kDefaultBoundMargin;
  Execution exec{};

  void validate() const {
    detail::require(samples_per_ray >= 2, "samples_per_ray must be at least 2");
    detail::require(bound_margin > 0.0, "bound margin must be positive");
  }
};

/// The frozen part of the renderer: decoder and ToRGB weights.
template <typename T>
struct NeuralRenderer {
  DecoderParams<T> decoder;
  ToRgbParams<T> to_rgb;

  static NeuralRenderer random(int channels, int latent_dim, std::uint64_t seed, int hidden = 64,
                               int color_features = 8) {
    return {DecoderParams<T>::random(channels, seed, hidden, color_features),
            ToRgbParams<T>::random(latent_dim, color_features, mix_seed(seed, 1))};
  }

  void validate() const {
    decoder.validate();
    to_rgb.validate();
    detail::require(decoder.color_features == to_rgb.color_features, "decoder and ToRGB disagree on color features");
  }

  template <typename U>
  NeuralRenderer<U> cast() const {
    return {decoder.template cast<U>(), to_rgb.template cast<U>()};
  }

  bool operator==(const NeuralRenderer&) const = default;
};

template <typename T>
struct RenderedImage {
  Image<T> rgb;         // H x W x 3, in [0, 1]
  Image<T> feature;     // H x W x color_features
  Image<T> weight_sum;  // H x W x 1, 1 - final transmittance

  bool operator==(const RenderedImage&) const = default;
};

/// Anything that maps a point to (density, color features).
template <typename F, typename T>
concept RadianceField = requires(const F& f, const Point3<T>& p, std::span<T> color) {
  { f.color_features() } -> std::convertible_to<int>;
  { f(p, color) } -> std::convertible_to<T>;
};

/// Pyramid query followed by the decoder.
template <typename T>
class PyramidField {
 public:
  PyramidField(const PyramidTriGrid<T>& pyr, const DecoderParams<T>& decoder) : pyr_(&pyr), decoder_(&decoder) {
    detail::require(pyr.channels() == decoder.in_channels, "decoder input width must equal pyramid channels");
  }

  int color_features() const { return decoder_->color_features; }

  T operator()(const Point3<T>& p, std::span<T> color) const {
    std::vector<T> features(pyr_->channels());
    query_pyramid_into(*pyr_, p, std::span<T>(features));
    DecoderActivations<T> act(*decoder_);
    return decode(*decoder_, std::span<const T>(features), color, act);
  }

  T density(const Point3<T>& p) const {
    std::vector<T> color(color_features());
    return (*this)(p, std::span<T>(color));
  }

 private:
  const PyramidTriGrid<T>* pyr_;
  const DecoderParams<T>* decoder_;
};

namespace detail {

/// Stratified samples in equal-width bins over [near, far]; every sample owns one bin width.
/// `eval(sample, point, color) -> sigma`, `record(sample, point, delta, sigma, alpha, transmittance)`.
template <typename T, typename Eval, typename Record>
void march_ray(const Vec3<double>& origin, const Vec3<double>& dir, double near, double far, int samples,
               bool jitter, std::uint64_t ray_seed, std::span<T> feature_out, T& weight_sum, std::span<T> color,
               Eval&& eval, Record&& record) {
  auto rng = make_rng(ray_seed);
  const double bin = (far - near) / samples;
  const T delta = static_cast<T>(bin);
  T trans = T(1);
  weight_sum = T(0);
  std::fill(feature_out.begin(), feature_out.end(), T(0));
  for (int s = 0; s < samples; ++s) {
    const double u = jitter ? uniform01(rng) : 0.5;
    const double t = near + (s + u) * bin;
    const Point3<T> p = (origin + dir * t).template cast<T>();
    const T sigma = eval(s, p, color);
    const T survive = std::exp(-sigma * delta);
    const T alpha = -std::expm1(-sigma * delta);
    const T w = trans * alpha;
    for (std::size_t j = 0; j < color.size(); ++j) feature_out[j] += w * color[j];
    weight_sum += w;
    record(s, p, delta, sigma, alpha, trans);
    trans *= survive;
  }
}

template <typename T>
bool all_finite(std::span<const T> v) {
  for (T x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

template <typename T>
struct CompositeResult {
  Image<T> feature;
  Image<T> weight_sum;
};

/// Emission-absorption compositing of an arbitrary field along every ray of the batch.
template <typename T, RadianceField<T> Field>
CompositeResult<T> march_and_composite(const Field& field, const RayBatch& rays, int samples_per_ray,
                                       std::uint64_t seed, bool jitter = true, Execution exec = {}) {
  rays.validate();
  detail::require(samples_per_ray >= 2, "samples_per_ray must be at least 2");
  const int k = field.color_features();
  CompositeResult<T> out{Image<T>(rays.height, rays.width, k), Image<T>(rays.height, rays.width, 1)};
  parallel_for(rays.size(), exec, [&](std::size_t begin, std::size_t end, std::size_t) {
    std::vector<T> color(k);
    for (std::size_t r = begin; r < end; ++r) {
      detail::march_ray<T>(
          rays.origins[r], rays.directions[r], rays.near, rays.far, samples_per_ray, jitter, mix_seed(seed, r),
          out.feature.pixel(r), out.weight_sum.data[r], std::span<T>(color),
          [&](int, const Point3<T>& p, std::span<T> c) {
            const T sigma = field(p, c);
            if (!std::isfinite(sigma) || !detail::all_finite<T>(c))
              throw NumericalError("non-finite field output on ray " + std::to_string(r), static_cast<long long>(r));
            return sigma;
          },
          [](int, const Point3<T>&, T, T, T, T) {});
    }
  });
  return out;
}

/// Per-sample record of a forward render; enough to run the exact adjoint.
/// Holds non-owning pointers to the pyramid and renderer: both must outlive the tape
/// and stay unmodified until `render_backward` has run.
template <typename T>
struct RenderTape {
  const PyramidTriGrid<T>* pyramid = nullptr;
  const NeuralRenderer<T>* renderer = nullptr;
  std::vector<T> latent;
  RayBatch rays;
  RenderOptions options;
  std::uint64_t seed = 0;

  // per sample, index ray * samples_per_ray + sample
  std::vector<Point3<T>> points;
  std::vector<T> delta;
  std::vector<T> sigma;
  std::vector<T> alpha;
  std::vector<T> transmittance;  // before the sample
  std::vector<T> color;          // color_features per sample
  std::vector<T> features;       // channels per sample
  std::vector<T> hidden_pre;     // decoder hidden width per sample
  std::vector<T> out_pre;        // decoder outputs per sample

  std::vector<T> scales;  // ToRGB modulation
  RenderedImage<T> output;

  std::size_t sample_count() const { return points.size(); }
  int samples_per_ray() const { return options.samples_per_ray; }

  /// Re-runs the forward pass from the recorded inputs.
  RenderedImage<T> replay() const;
};

/// Renders an arbitrary ray batch; the image layout follows the batch.
template <typename T>
RenderedImage<T> render_rays(const PyramidTriGrid<T>& pyr, const NeuralRenderer<T>& renderer, const RayBatch& rays,
                             std::span<const T> w, std::uint64_t seed, const RenderOptions& opts = {},
                             RenderTape<T>* tape = nullptr) {
  pyr.validate();
  renderer.validate();
  rays.validate();
  opts.validate();
  detail::require(pyr.channels() == renderer.decoder.in_channels, "decoder input width must equal pyramid channels");
  detail::require(w.size() == static_cast<std::size_t>(renderer.to_rgb.latent_dim), "latent code has wrong dimension");
  for (T v : w) detail::require(std::isfinite(v), "latent code must be finite");

  const auto& dec = renderer.decoder;
  const int k = dec.color_features;
  const int channels = pyr.channels();
  const int n = opts.samples_per_ray;
  const std::size_t ray_count = rays.size();
  const std::size_t total = ray_count * n;

  if (tape) {
    tape->pyramid = &pyr;
    tape->renderer = &renderer;
    tape->latent.assign(w.begin(), w.end());
    tape->rays = rays;
    tape->options = opts;
    tape->seed = seed;
    tape->points.resize(total);
    tape->delta.resize(total);
    tape->sigma.resize(total);
    tape->alpha.resize(total);
    tape->transmittance.resize(total);
    tape->color.resize(total * k);
    tape->features.resize(total * channels);
    tape->hidden_pre.resize(total * dec.hidden);
    tape->out_pre.resize(total * dec.out_size());
  }

  RenderedImage<T> out{Image<T>(rays.height, rays.width, 3), Image<T>(rays.height, rays.width, k),
                       Image<T>(rays.height, rays.width, 1)};

  parallel_for(ray_count, opts.exec, [&](std::size_t begin, std::size_t end, std::size_t) {
    std::vector<T> features(channels);
    std::vector<T> color(k);
    DecoderActivations<T> act(dec);
    for (std::size_t r = begin; r < end; ++r) {
      const std::size_t base = r * n;
      detail::march_ray<T>(
          rays.origins[r], rays.directions[r], rays.near, rays.far, n, opts.jitter, mix_seed(seed, r),
          out.feature.pixel(r), out.weight_sum.data[r], std::span<T>(color),
          [&](int s, const Point3<T>& p, std::span<T> c) {
            query_pyramid_into(pyr, p, std::span<T>(features));
            const T sigma = decode(dec, std::span<const T>(features), c, act);
            if (!std::isfinite(sigma) || !detail::all_finite<T>(c))
              throw NumericalError("non-finite decoder output on ray " + std::to_string(r), static_cast<long long>(r));
            if (tape) {
              const std::size_t q = base + s;
              std::copy(features.begin(), features.end(), tape->features.begin() + q * channels);
              std::copy(act.hidden_pre.begin(), act.hidden_pre.end(), tape->hidden_pre.begin() + q * dec.hidden);
              std::copy(act.out_pre.begin(), act.out_pre.end(), tape->out_pre.begin() + q * dec.out_size());
              std::copy(c.begin(), c.end(), tape->color.begin() + q * k);
            }
            return sigma;
          },
          [&](int s, const Point3<T>& p, T delta, T sigma, T alpha, T trans) {
            if (!tape) return;
            const std::size_t q = base + s;
            tape->points[q] = p;
            tape->delta[q] = delta;
            tape->sigma[q] = sigma;
            tape->alpha[q] = alpha;
            tape->transmittance[q] = trans;
          });
    }
  });

  const auto scales = renderer.to_rgb.modulation(w);
  out.rgb = to_rgb_scaled(out.feature, out.weight_sum, std::span<const T>(scales), renderer.to_rgb);
  if (tape) {
    tape->scales = scales;
    tape->output = out;
  }
  return out;
}

/// R(T, c, w): camera rays, pyramid ray marching, ToRGB.
template <typename T>
RenderedImage<T> render(const PyramidTriGrid<T>& pyr, const NeuralRenderer<T>& renderer, const CameraPose& camera,
                        std::span<const T> w, std::uint64_t seed, const RenderOptions& opts = {},
                        RenderTape<T>* tape = nullptr) {
  return render_rays(pyr, renderer, camera_rays(camera, opts.bound_margin), w, seed, opts, tape);
}

template <typename T>
RenderedImage<T> RenderTape<T>::replay() const {
  detail::require(pyramid != nullptr && renderer != nullptr, "tape has not been recorded");
  return render_rays(*pyramid, *renderer, rays, std::span<const T>(latent), seed, options);
}

}  // namespace pyrtri
