#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "pyrtri/core/random.hpp"
#include "pyrtri/render/renderer.hpp"

namespace pyrtri {
namespace {

struct ConstantField {
  float sigma;
  float color;
  int k = 1;
  int color_features() const { return k; }
  float operator()(const Point3<float>&, std::span<float> c) const {
    std::fill(c.begin(), c.end(), color);
    return sigma;
  }
};

struct NanField {
  int color_features() const { return 1; }
  float operator()(const Point3<float>& p, std::span<float> c) const {
    c[0] = 0.5f;
    return p.x > 0.5f ? std::numeric_limits<float>::quiet_NaN() : 1.0f;
  }
};

RayBatch single_ray(double near, double far) {
  RayBatch b;
  b.origins = {{0.0, 0.0, 0.0}};
  b.directions = {{1.0, 0.0, 0.0}};
  b.near = near;
  b.far = far;
  b.height = b.width = 1;
  return b;
}

PyramidTriGrid<float> random_pyramid(std::vector<int> res, int channels, std::uint64_t seed, double scale = 1.0) {
  PyramidTriGrid<float> pyr(std::span<const int>(res), channels);
  auto rng = make_rng(seed);
  for (auto& l : pyr.levels())
    for (auto& v : l.values()) v = static_cast<float>(scale * standard_normal(rng));
  return pyr;
}

TEST(CameraRays, SinglePixelLooksAtOrigin) {
  const auto rays = camera_rays(CameraPose{0.0, 90.0, 2.7, 30.0, 1});
  ASSERT_EQ(rays.size(), 1u);
  EXPECT_NEAR(rays.origins[0].x, 2.7, 1e-12);
  EXPECT_NEAR(rays.origins[0].y, 0.0, 1e-12);
  EXPECT_NEAR(rays.origins[0].z, 0.0, 1e-12);
  EXPECT_NEAR(rays.directions[0].x, -1.0, 1e-12);
  EXPECT_NEAR(rays.directions[0].y, 0.0, 1e-12);
  EXPECT_NEAR(rays.directions[0].z, 0.0, 1e-12);
  EXPECT_NEAR(rays.near, 1.4, 1e-12);
  EXPECT_NEAR(rays.far, 4.0, 1e-12);
}

TEST(CameraRays, OppositeAzimuthGivesAntiparallelCenterRays) {
  for (double az : {0.0, 33.0, 250.0}) {
    const auto a = camera_rays(CameraPose{az, 90.0, 2.7, 30.0, 5});
    const auto b = camera_rays(CameraPose{az + 180.0, 90.0, 2.7, 30.0, 5});
    EXPECT_NEAR(dot(a.directions[12], b.directions[12]), -1.0, 1e-6);
  }
  // off the equator only the horizontal components flip
  const auto a = camera_rays(CameraPose{20.0, 70.0, 2.7, 30.0, 5});
  const auto b = camera_rays(CameraPose{200.0, 70.0, 2.7, 30.0, 5});
  EXPECT_NEAR(a.directions[12].x, -b.directions[12].x, 1e-6);
  EXPECT_NEAR(a.directions[12].y, -b.directions[12].y, 1e-6);
  EXPECT_NEAR(a.directions[12].z, b.directions[12].z, 1e-6);
}

TEST(CameraRays, AllRaysUnitNorm) {
  const auto rays = camera_rays(CameraPose{12.0, 80.0, 2.7, 30.0, 16});
  ASSERT_EQ(rays.size(), 256u);
  for (const auto& d : rays.directions) EXPECT_NEAR(norm(d), 1.0, 1e-6);
}

TEST(CameraRays, PolesUseFallbackUp) {
  for (double polar : {0.0, 180.0}) {
    const auto rays = camera_rays(CameraPose{0.0, polar, 2.7, 30.0, 3});
    for (const auto& d : rays.directions) {
      EXPECT_TRUE(isfinite(d));
      EXPECT_NEAR(norm(d), 1.0, 1e-9);
    }
    EXPECT_NEAR(std::abs(rays.directions[4].z), 1.0, 1e-9);
  }
}

TEST(CameraRays, InvalidPoseThrows) {
  EXPECT_THROW(camera_rays(CameraPose{0, 90, 2.7, 180.0, 4}), InvalidInput);
  EXPECT_THROW(camera_rays(CameraPose{0, 90, -1.0, 30.0, 4}), InvalidInput);
  EXPECT_THROW(camera_rays(CameraPose{0, 90, 2.7, 30.0, 0}), InvalidInput);
}

TEST(MarchAndComposite, ZeroDensityIsEmpty) {
  const auto rays = camera_rays(CameraPose{0, 90, 2.7, 30, 4});
  const auto out = march_and_composite<float>(ConstantField{0.0f, 1.0f}, rays, 32, 7);
  for (float v : out.feature.data) EXPECT_EQ(v, 0.0f);
  for (float v : out.weight_sum.data) EXPECT_EQ(v, 0.0f);
}

TEST(MarchAndComposite, ConstantDensityMatchesAnalyticIntegral) {
  // integral_0^2 exp(-t) dt = 1 - e^-2
  const auto out = march_and_composite<float>(ConstantField{1.0f, 1.0f}, single_ray(0.0, 2.0), 256, 3);
  EXPECT_NEAR(out.feature.data[0], 1.0 - std::exp(-2.0), 1e-3);
  EXPECT_NEAR(out.weight_sum.data[0], 1.0 - std::exp(-2.0), 1e-3);
}

TEST(MarchAndComposite, NonFiniteFieldReportsRay) {
  auto rays = single_ray(0.0, 1.0);
  rays.origins.push_back({0.0, 0.0, 0.0});
  rays.directions.push_back({0.0, 1.0, 0.0});
  rays.width = 2;
  try {
    march_and_composite<float>(NanField{}, rays, 8, 1);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.ray_index(), 0);
  }
}

TEST(MarchAndComposite, RejectsTooFewSamples) {
  EXPECT_THROW(march_and_composite<float>(ConstantField{1, 1}, single_ray(0, 1), 1, 0), InvalidInput);
}

TEST(Render, WeightSumWithinUnitIntervalForRandomGrids) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto pyr = random_pyramid({8, 16}, 6, seed, 3.0);
    auto renderer = NeuralRenderer<float>::random(6, 4, seed);
    renderer.decoder.b2[0] = 8.0f;
    const std::vector<float> w(4, 0.3f);
    const auto img = render(pyr, renderer, CameraPose{40.0 * seed, 90, 2.7, 30, 12}, std::span<const float>(w), seed,
                            RenderOptions{32});
    for (float v : img.weight_sum.data) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f + 1e-6f);
    }
    for (float v : img.rgb.data) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Render, ZeroPyramidAndBiasIsBackground) {
  PyramidTriGrid<float> pyr({8, 16}, 12);
  const auto renderer = NeuralRenderer<float>::random(12, 8, 5);
  const std::vector<float> w(8, 0.0f);
  const auto img = render(pyr, renderer, CameraPose{0, 90, 2.7, 30, 8}, std::span<const float>(w), 1);
  for (float v : img.rgb.data) EXPECT_NEAR(v, 1.0f, 1e-3f);
  for (float v : img.weight_sum.data) EXPECT_LT(v, 1e-3f);
}

TEST(Render, SameSeedIsBitIdentical) {
  const auto pyr = random_pyramid({8, 16}, 12, 4);
  const auto renderer = NeuralRenderer<float>::random(12, 8, 4);
  const std::vector<float> w(8, 0.1f);
  const CameraPose cam{30, 75, 2.7, 30, 8};
  const auto a = render(pyr, renderer, cam, std::span<const float>(w), 99, RenderOptions{24});
  const auto b = render(pyr, renderer, cam, std::span<const float>(w), 99, RenderOptions{24});
  EXPECT_EQ(a, b);
  const auto c = render(pyr, renderer, cam, std::span<const float>(w), 100, RenderOptions{24});
  EXPECT_NE(a.rgb.data, c.rgb.data);
}

TEST(Render, ParallelMatchesDeterministic) {
  const auto pyr = random_pyramid({8, 16}, 6, 8, 2.0);
  const auto renderer = NeuralRenderer<float>::random(6, 4, 8);
  const std::vector<float> w(4, 0.1f);
  RenderOptions serial{16};
  RenderOptions threaded{16};
  threaded.exec.threads = 4;
  const CameraPose cam{10, 95, 2.7, 30, 9};
  EXPECT_EQ(render(pyr, renderer, cam, std::span<const float>(w), 3, serial),
            render(pyr, renderer, cam, std::span<const float>(w), 3, threaded));
}

TEST(Render, MoreDensityNeverLowersOpacity) {
  const auto pyr = random_pyramid({8}, 4, 12, 2.0);
  auto low = NeuralRenderer<float>::random(4, 2, 12);
  low.decoder.b2[0] = 6.0f;
  auto high = low;
  high.decoder.b2[0] = 7.5f;  // softplus is monotone: every sample's density grows
  const std::vector<float> w(2, 0.0f);
  const CameraPose cam{0, 90, 2.7, 30, 10};
  const auto a = render(pyr, low, cam, std::span<const float>(w), 5, RenderOptions{32});
  const auto b = render(pyr, high, cam, std::span<const float>(w), 5, RenderOptions{32});
  for (std::size_t i = 0; i < a.weight_sum.data.size(); ++i) EXPECT_GE(b.weight_sum.data[i], a.weight_sum.data[i]);
}

TEST(Render, DownsampledHighResMatchesLowRes) {
  const auto pyr = random_pyramid({8}, 6, 21, 1.0);
  auto renderer = NeuralRenderer<float>::random(6, 4, 21);
  renderer.decoder.b2[0] = 7.0f;
  const std::vector<float> w(4, 0.0f);
  RenderOptions opts{64};
  const auto hi = render(pyr, renderer, CameraPose{15, 80, 2.7, 30, 64}, std::span<const float>(w), 2, opts);
  const auto lo = render(pyr, renderer, CameraPose{15, 80, 2.7, 30, 32}, std::span<const float>(w), 2, opts);
  const auto down = downsample2(hi.rgb);
  double mae = 0.0;
  for (std::size_t i = 0; i < down.data.size(); ++i) mae += std::abs(down.data[i] - lo.rgb.data[i]);
  mae /= down.data.size();
  EXPECT_LE(mae, 0.05);
}

TEST(Render, TapeWeightsArePartition) {
  const auto pyr = random_pyramid({4, 8}, 4, 31, 2.0);
  auto renderer = NeuralRenderer<float>::random(4, 3, 31);
  renderer.decoder.b2[0] = 8.0f;
  const std::vector<float> w(3, 0.0f);
  RenderTape<float> tape;
  render(pyr, renderer, CameraPose{0, 90, 2.7, 30, 6}, std::span<const float>(w), 1, RenderOptions{16}, &tape);
  for (std::size_t r = 0; r < tape.rays.size(); ++r) {
    double total = 0.0;
    for (int s = 0; s < 16; ++s) {
      const std::size_t q = r * 16 + s;
      const double wgt = tape.transmittance[q] * tape.alpha[q];
      EXPECT_GE(wgt, 0.0);
      total += wgt;
    }
    EXPECT_LE(total, 1.0 + 1e-6);
  }
}

TEST(ToRgb, ZeroFeatureIsBackground) {
  const auto p = ToRgbParams<float>::random(4, 3, 1);
  Image<float> feat(3, 3, 3), ws(3, 3, 1);
  const std::vector<float> w(4, 0.7f);
  const auto rgb = to_rgb(feat, ws, std::span<const float>(w), p);
  for (float v : rgb.data) EXPECT_EQ(v, 1.0f);
}

TEST(ToRgb, UnitScalesGivePlainLinearMap) {
  auto p = ToRgbParams<double>::identity_modulation(2, 3);
  p.linear = {0.2, 0.1, 0.0, 0.0, 0.3, 0.1, 0.05, 0.05, 0.4};
  p.background = {0, 0, 0};
  Image<double> feat(1, 1, 3), ws(1, 1, 1);
  feat.data = {0.5, 0.8, 0.3};
  ws.data = {1.0};
  const std::vector<double> w{0.0, 0.0};
  const auto rgb = to_rgb(feat, ws, std::span<const double>(w), p);
  EXPECT_NEAR(rgb.data[0], 0.2 * 0.5 + 0.1 * 0.8, 1e-15);
  EXPECT_NEAR(rgb.data[1], 0.3 * 0.8 + 0.1 * 0.3, 1e-15);
  EXPECT_NEAR(rgb.data[2], 0.05 * 0.5 + 0.05 * 0.8 + 0.4 * 0.3, 1e-15);
}

TEST(ToRgb, DoublingScalesDoublesForegroundTerm) {
  auto p = ToRgbParams<double>::random(3, 4, 9);
  Image<double> feat(2, 2, 4), ws(2, 2, 1);
  auto rng = make_rng(10);
  for (auto& v : feat.data) v = 0.2 * uniform01(rng);
  for (auto& v : ws.data) v = uniform01(rng);
  const std::vector<double> s{0.9, 1.1, 0.7, 1.3};
  const std::vector<double> s2{1.8, 2.2, 1.4, 2.6};
  for (std::size_t i = 0; i < feat.pixel_count(); ++i) {
    const auto a = to_rgb_preclamp(p, std::span<const double>(s), feat.pixel(i), ws.data[i]);
    const auto b = to_rgb_preclamp(p, std::span<const double>(s2), feat.pixel(i), ws.data[i]);
    for (int c = 0; c < 3; ++c) {
      // oracle: direct evaluation of the foreground sum
      double fg = 0.0;
      for (int j = 0; j < 4; ++j) fg += p.linear[c * 4 + j] * s[j] * feat.pixel(i)[j];
      const double rest = ws.data[i] * p.bias[c] + (1 - ws.data[i]) * p.background[c];
      EXPECT_NEAR(a[c] - rest, fg, 1e-14);
      EXPECT_NEAR(b[c] - rest, 2.0 * fg, 1e-14);
    }
  }
}

TEST(ToRgb, ShapeMismatchThrows) {
  const auto p = ToRgbParams<float>::random(2, 3, 1);
  Image<float> feat(2, 2, 4), ws(2, 2, 1);
  const std::vector<float> w(2, 0.0f);
  EXPECT_THROW(to_rgb(feat, ws, std::span<const float>(w), p), InvalidInput);
}

}  // namespace
}  // namespace pyrtri
