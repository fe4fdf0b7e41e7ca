#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/image.hpp"
#include "pyrtri/diff/adam.hpp"
#include "pyrtri/diff/backward.hpp"
#include "pyrtri/render/renderer.hpp"
#include "pyrtri/synthesis/network.hpp"

namespace pyrtri {

struct InversionConfig {
  int iterations = 200;
  double learning_rate = 0.02;
  double latent_reg = 1e-3;   // weight of |w - w_mean|^2
  std::uint64_t render_seed = 0;
  RenderOptions render{};
};

template <typename T>
struct InversionResult {
  std::vector<T> latent;  // best-loss latent w*
  double best_loss = std::numeric_limits<double>::infinity();
  int best_iteration = -1;
  std::vector<double> loss_trace;       // loss at every evaluated iterate
  std::vector<double> best_loss_trace;  // running minimum, non-increasing
};

class InversionAborted : public NumericalError {
 public:
  InversionAborted(const std::string& what, std::vector<double> trace)
      : NumericalError(what), loss_trace(std::move(trace)) {}
  std::vector<double> loss_trace;
};

namespace detail {

template <typename T>
double mean_squared_error(const Image<T>& a, const Image<T>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    s += d * d;
  }
  return a.data.empty() ? 0.0 : s / a.data.size();
}

}  // namespace detail

/// Inversion objective at `w`: mean squared error of R(G(w), c, w) against the target plus
/// latent_reg * |w - w_mean|^2. Writes d objective / d w into `grad` when non-null.
template <typename T>
double inversion_objective(const SynthesisNetwork<T>& net, const NeuralRenderer<T>& renderer, const Image<T>& target,
                           const CameraPose& camera, std::span<const T> w, std::span<const T> w_mean,
                           const InversionConfig& cfg, std::vector<T>* grad = nullptr) {
  SynthesisTrace<T> trace;
  const auto pyr = synthesize(net, w, grad ? &trace : nullptr);
  RenderTape<T> tape;
  const auto img = render(pyr, renderer, camera, w, cfg.render_seed, cfg.render, grad ? &tape : nullptr);
  detail::require(img.rgb.same_shape(target), "target image size does not match the render size");
  double reg = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) reg += double(w[i] - w_mean[i]) * double(w[i] - w_mean[i]);
  const double loss = detail::mean_squared_error(img.rgb, target) + cfg.latent_reg * reg;
  if (grad) {
    Image<T> upstream(target.height, target.width, 3);
    const T scale = static_cast<T>(2.0 / target.data.size());
    for (std::size_t i = 0; i < upstream.data.size(); ++i) upstream.data[i] = scale * (img.rgb.data[i] - target.data[i]);
    const auto g = render_backward(tape, upstream, cfg.render.exec);
    const auto g_synth = synthesize_backward(net, trace, g.grid);
    grad->assign(w.size(), T(0));
    for (std::size_t i = 0; i < w.size(); ++i)
      (*grad)[i] = g.latent[i] + g_synth[i] + static_cast<T>(2.0 * cfg.latent_reg) * (w[i] - w_mean[i]);
  }
  return loss;
}

/// w* = argmin over w of the inversion objective, by Adam from `w_init`.
/// Renderer weights and the network are frozen; w_mean is the zero vector when empty.
template <typename T>
InversionResult<T> invert(const SynthesisNetwork<T>& net, const NeuralRenderer<T>& renderer, const Image<T>& target,
                          const CameraPose& camera, std::span<const T> w_init, const InversionConfig& cfg,
                          std::span<const T> w_mean = {}) {
  const std::size_t d = net.config.latent_dim;
  detail::require(w_init.size() == d, "initial latent has wrong dimension");
  detail::require(target.channels == 3 && target.height == camera.image_size && target.width == camera.image_size,
                  "target image size does not match the render size");
  detail::require(cfg.iterations >= 0, "iteration count must be non-negative");
  std::vector<T> mean(d, T(0));
  if (!w_mean.empty()) {
    detail::require(w_mean.size() == d, "w_mean has wrong dimension");
    mean.assign(w_mean.begin(), w_mean.end());
  }

  InversionResult<T> result;
  std::vector<T> w(w_init.begin(), w_init.end());
  VectorAdam<T> opt(d);
  std::vector<T> grad;
  for (int it = 0; it <= cfg.iterations; ++it) {
    const bool last = it == cfg.iterations;
    const double loss = inversion_objective(net, renderer, target, camera, std::span<const T>(w),
                                            std::span<const T>(mean), cfg, last ? nullptr : &grad);
    result.loss_trace.push_back(loss);
    if (!std::isfinite(loss))
      throw InversionAborted("inversion loss became non-finite at iteration " + std::to_string(it), result.loss_trace);
    if (loss < result.best_loss) {
      result.best_loss = loss;
      result.best_iteration = it;
      result.latent = w;
    }
    result.best_loss_trace.push_back(result.best_loss);
    if (last) break;
    opt.step(std::span<T>(w), std::span<const T>(grad), cfg.learning_rate);
  }
  return result;
}

}  // namespace pyrtri
