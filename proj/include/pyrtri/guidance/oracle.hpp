#pragma once

#include <functional>
#include <utility>

#include "pyrtri/guidance/provider.hpp"

namespace pyrtri {

namespace detail {

/// Box average over stride x stride blocks.
inline Image<double> average_pool(const Image<double>& x, int stride) {
  if (stride == 1) return x;
  require(x.height % stride == 0 && x.width % stride == 0, "image size must be divisible by the encoder stride");
  Image<double> out(x.height / stride, x.width / stride, x.channels);
  const double inv = 1.0 / (stride * stride);
  for (int r = 0; r < x.height; ++r)
    for (int c = 0; c < x.width; ++c)
      for (int ch = 0; ch < x.channels; ++ch) out.at(r / stride, c / stride, ch) += inv * x.at(r, c, ch);
  return out;
}

inline Image<double> average_pool_adjoint(const Image<double>& g, int stride, int height, int width) {
  if (stride == 1) return g;
  Image<double> out(height, width, g.channels);
  const double inv = 1.0 / (stride * stride);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      for (int ch = 0; ch < g.channels; ++ch) out.at(r, c, ch) = inv * g.at(r / stride, c / stride, ch);
  return out;
}

}  // namespace detail

/// eps-hat = eps + lambda (z_0 - E(x_target(c))), z_0 recovered from the query.
/// The SDS gradient then equals the gradient of lambda/2 |E(x) - E(x_target)|^2.
/// Encoder: average pooling with the given stride (1 = identity, pixel space).
class LinearPullProvider : public GuidanceProvider {
 public:
  using TargetFn = std::function<Image<double>(const Conditioning&)>;

  LinearPullProvider(TargetFn target, double lambda, int encoder_stride = 1)
      : target_(std::move(target)), lambda_(lambda), stride_(encoder_stride) {
    detail::require(encoder_stride >= 1, "encoder stride must be positive");
  }

  Image<double> predict_noise(const NoiseQuery& q) override {
    detail::require(q.z_t.same_shape(q.noise), "linear-pull oracle needs the reference noise");
    const double a = std::sqrt(q.alpha_bar);
    const double b = std::sqrt(1.0 - q.alpha_bar);
    const Image<double> z_target = encode(target_(q.cond));
    detail::require(z_target.same_shape(q.z_t), "oracle target does not match the latent shape");
    Image<double> out(q.z_t.height, q.z_t.width, q.z_t.channels);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      const double z0 = (q.z_t.data[i] - b * q.noise.data[i]) / a;
      out.data[i] = q.noise.data[i] + lambda_ * (z0 - z_target.data[i]);
    }
    return out;
  }

  Image<double> denoise(const Image<double>& image, double, const Conditioning& cond) override {
    auto t = target_(cond);
    detail::require(t.same_shape(image), "oracle target does not match the image shape");
    return t;
  }

  Image<double> encode(const Image<double>& x) const override { return detail::average_pool(x, stride_); }
  Image<double> encode_adjoint(const Image<double>& g, const Image<double>& x) const override {
    return detail::average_pool_adjoint(g, stride_, x.height, x.width);
  }

  double lambda() const { return lambda_; }

 private:
  TargetFn target_;
  double lambda_;
  int stride_;
};

/// Returns the query's own noise (zero SDS residual) and denoises as the identity.
class EchoProvider : public GuidanceProvider {
 public:
  Image<double> predict_noise(const NoiseQuery& q) override { return q.noise; }
  Image<double> denoise(const Image<double>& image, double, const Conditioning&) override { return image; }
};

/// Denoiser that returns the fixed target for every view (and whose noise prediction pulls toward it).
class FixedTargetProvider : public LinearPullProvider {
 public:
  explicit FixedTargetProvider(Image<double> target, double lambda = 1.0)
      : LinearPullProvider([t = std::move(target)](const Conditioning&) { return t; }, lambda) {}
};

}  // namespace pyrtri
