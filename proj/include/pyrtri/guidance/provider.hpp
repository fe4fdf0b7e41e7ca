#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/image.hpp"
#include "pyrtri/render/camera.hpp"

namespace pyrtri {

/// Cosine noise schedule on normalized time: alpha_bar(t) = cos^2(pi t / 2).
inline double cosine_alpha_bar(double t) {
  const double c = std::cos(0.5 * std::numbers::pi * t);
  return c * c;
}

/// Failure inside a guidance provider. Retriable failures (transport, timeouts) may be retried
/// by the optimization loops; the parameters are untouched when a provider call fails.
class ProviderError : public Error {
 public:
  ProviderError(const std::string& what, bool retriable = true) : Error(what), retriable_(retriable) {}
  bool retriable() const noexcept { return retriable_; }

 private:
  bool retriable_;
};

/// Timeout, refused connection, malformed response or dimension mismatch from a remote provider.
class TransportError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

/// y: the text prompt plus a seed. The camera is filled in for in-process providers only
/// (oracles need it to know which view is being scored); it is not sent over the wire.
struct Conditioning {
  std::string prompt;
  std::uint64_t seed = 0;
  std::optional<CameraPose> camera;
};

/// One noise-prediction request. `noise` is the epsilon used to form z_t; real models ignore it,
/// oracle fixtures use it to recover z_0 exactly.
struct NoiseQuery {
  Image<double> z_t;
  double timestep = 0.0;
  double alpha_bar = 1.0;
  Image<double> noise;
  Conditioning cond;
};

class GuidanceProvider {
 public:
  virtual ~GuidanceProvider() = default;

  /// epsilon-hat(z_t; y, t), same shape as z_t.
  virtual Image<double> predict_noise(const NoiseQuery& query) = 0;

  /// Refines a noisy image at the given noise level. Also used with noise level 1 on pure
  /// noise to generate a reference image.
  virtual Image<double> denoise(const Image<double>& image, double noise_level, const Conditioning& cond) = 0;

  /// z_0 = E(x). Pixel-space providers keep the identity.
  virtual Image<double> encode(const Image<double>& x) const { return x; }

  /// (dz_0/dx)^T g_z evaluated at x.
  virtual Image<double> encode_adjoint(const Image<double>& g_z, const Image<double>& x) const {
    (void)x;
    return g_z;
  }
};

namespace detail {

inline void require_finite(const Image<double>& img, const char* what) {
  for (double v : img.data)
    if (!std::isfinite(v)) throw ProviderError(what, false);
}

}  // namespace detail
}  // namespace pyrtri
