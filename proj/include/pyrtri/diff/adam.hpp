#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/trigrid.hpp"

namespace pyrtri {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-level learning-rate multiplier (reference_resolution / resolution)^gamma.
/// High-resolution levels learn slower; gamma = 0 disables the scaling.
struct LevelLrPolicy {
  double gamma = 0.5;
  double reference_resolution = 8.0;

  double multiplier(int resolution) const { return std::pow(reference_resolution / resolution, gamma); }
};

namespace detail {

inline bool finite_span(std::span<const float> g) {
  for (float v : g)
    if (!std::isfinite(v)) return false;
  return true;
}
inline bool finite_span(std::span<const double> g) {
  for (double v : g)
    if (!std::isfinite(v)) return false;
  return true;
}

/// One Adam update of `params` in place; `step` is the 1-based step index.
template <typename T, typename G>
void adam_update(std::span<T> params, std::span<T> m, std::span<T> v, std::span<const G> grads, double lr,
                 const AdamConfig& cfg, long step) {
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, double(step)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, double(step)));
  const T eps = static_cast<T>(cfg.epsilon);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = static_cast<T>(grads[i]);
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const T m_hat = m[i] / c1;
    const T v_hat = v[i] / c2;
    params[i] -= rate * (m_hat / (std::sqrt(v_hat) + eps));
  }
}

}  // namespace detail

/// Adam over the values of a pyramid with per-level learning rates.
template <typename T>
class PyramidAdam {
 public:
  PyramidAdam() = default;
  explicit PyramidAdam(const PyramidTriGrid<T>& shape, AdamConfig cfg = {}, LevelLrPolicy policy = {})
      : cfg_(cfg), policy_(policy) {
    for (const auto& level : shape.levels()) {
      m_.emplace_back(level.size(), T(0));
      v_.emplace_back(level.size(), T(0));
      multipliers_.push_back(policy.multiplier(level.resolution()));
    }
  }

  /// Applies one update. A gradient with any non-finite entry skips the step and is counted.
  template <typename G>
  bool step(PyramidTriGrid<T>& params, const PyramidGradient<G>& grads, double base_lr) {
    detail::require(base_lr > 0.0, "learning rate must be positive");
    detail::require(params.level_count() == m_.size() && grads.levels.size() == m_.size(),
                    "optimizer, parameters and gradients disagree on level count");
    for (std::size_t l = 0; l < m_.size(); ++l)
      detail::require(params.level(l).size() == m_[l].size() && grads.levels[l].size() == m_[l].size(),
                      "optimizer, parameters and gradients disagree on level size");
    for (const auto& g : grads.levels)
      if (!detail::finite_span(std::span<const G>(g))) {
        ++skipped_;
        return false;
      }
    ++steps_;
    for (std::size_t l = 0; l < m_.size(); ++l)
      detail::adam_update(params.level(l).values(), std::span<T>(m_[l]), std::span<T>(v_[l]),
                          std::span<const G>(grads.levels[l]), base_lr * multipliers_[l], cfg_, steps_);
    return true;
  }

  long step_count() const { return steps_; }
  long skipped_steps() const { return skipped_; }
  double level_multiplier(std::size_t level) const { return multipliers_.at(level); }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  AdamConfig cfg_{};
  LevelLrPolicy policy_{};
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::vector<double> multipliers_;
  long steps_ = 0;
  long skipped_ = 0;
};

/// Adam over a flat parameter vector (latent codes).
template <typename T>
class VectorAdam {
 public:
  explicit VectorAdam(std::size_t size = 0, AdamConfig cfg = {}) : cfg_(cfg), m_(size, T(0)), v_(size, T(0)) {}

  template <typename G>
  bool step(std::span<T> params, std::span<const G> grads, double lr) {
    detail::require(lr > 0.0, "learning rate must be positive");
    detail::require(params.size() == m_.size() && grads.size() == m_.size(), "Adam parameter size mismatch");
    if (!detail::finite_span(grads)) {
      ++skipped_;
      return false;
    }
    ++steps_;
    detail::adam_update(params, std::span<T>(m_), std::span<T>(v_), grads, lr, cfg_, steps_);
    return true;
  }

  long step_count() const { return steps_; }
  long skipped_steps() const { return skipped_; }

 private:
  AdamConfig cfg_{};
  std::vector<T> m_;
  std::vector<T> v_;
  long steps_ = 0;
  long skipped_ = 0;
};

}  // namespace pyrtri
