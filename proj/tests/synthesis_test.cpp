#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "pyrtri/core/random.hpp"
#include "pyrtri/synthesis/inversion.hpp"
#include "pyrtri/synthesis/network.hpp"

namespace pyrtri {
namespace {

SynthesisConfig tiny_config() {
  SynthesisConfig cfg;
  cfg.resolutions = {4, 8};
  cfg.channels = 2;
  cfg.latent_dim = 4;
  cfg.backbone_channels = 3;
  return cfg;
}

template <typename T>
std::vector<T> random_latent(int d, std::uint64_t seed, double scale = 1.0) {
  auto rng = make_rng(seed, 0x1a7);
  std::vector<T> w(d);
  for (auto& v : w) v = static_cast<T>(scale * standard_normal(rng));
  return w;
}

template <typename T>
NeuralRenderer<T> visible_renderer(int channels, int latent_dim, std::uint64_t seed) {
  auto r = NeuralRenderer<T>::random(channels, latent_dim, seed, 16, 4);
  r.decoder.b2[0] = r.decoder.density_shift - T(1);
  r.to_rgb.background = {T(0.5), T(0.5), T(0.5)};
  for (auto& v : r.to_rgb.affine) v *= T(5);
  return r;
}

TEST(Synthesize, ToyConfigEmitsExactShapes) {
  SynthesisConfig cfg;
  cfg.resolutions = {8, 16, 32};
  cfg.channels = 12;
  cfg.depth_layers = 3;
  const auto net = SynthesisNetwork<float>::random(cfg, 1);
  const auto w = random_latent<float>(cfg.latent_dim, 2);
  const auto pyr = synthesize(net, std::span<const float>(w));
  ASSERT_EQ(pyr.level_count(), 3u);
  for (std::size_t l = 0; l < 3; ++l) {
    const int r = 8 << l;
    EXPECT_EQ(pyr.level(l).resolution(), r);
    EXPECT_EQ(pyr.level(l).channels(), 12);
    EXPECT_EQ(pyr.level(l).depth_layers(), 3);
    EXPECT_EQ(pyr.level(l).size(), 3u * 3u * 12u * r * r);
  }
  EXPECT_NO_THROW(pyr.validate());
}

TEST(Synthesize, ZeroNetworkGivesZeroPyramid) {
  SynthesisConfig cfg;
  cfg.resolutions = {8, 16};
  const auto net = SynthesisNetwork<float>::zeros(cfg);
  const auto w = random_latent<float>(cfg.latent_dim, 3);
  const auto pyr = synthesize(net, std::span<const float>(w));
  for (const auto& l : pyr.levels())
    for (float v : l.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Synthesize, DifferentLatentsGiveDifferentPyramids) {
  SynthesisConfig cfg;
  cfg.resolutions = {8, 16};
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto net = SynthesisNetwork<float>::random(cfg, seed);
    const auto w1 = random_latent<float>(cfg.latent_dim, 10 * seed);
    const auto w2 = random_latent<float>(cfg.latent_dim, 10 * seed + 1);
    const auto a = synthesize(net, std::span<const float>(w1));
    const auto b = synthesize(net, std::span<const float>(w2));
    double max_diff = 0.0;
    for (std::size_t l = 0; l < a.level_count(); ++l)
      for (std::size_t i = 0; i < a.level(l).size(); ++i)
        max_diff = std::max(max_diff, double(std::abs(a.level(l).values()[i] - b.level(l).values()[i])));
    EXPECT_GT(max_diff, 0.0) << "seed " << seed;
  }
}

TEST(Synthesize, RejectsBadConfiguration) {
  SynthesisConfig cfg;
  cfg.resolutions = {8, 32};
  EXPECT_THROW(SynthesisNetwork<float>::zeros(cfg), InvalidInput);
  cfg.resolutions = {6, 12};
  EXPECT_THROW(SynthesisNetwork<float>::zeros(cfg), InvalidInput);
  const auto net = SynthesisNetwork<float>::random(tiny_config(), 1);
  const std::vector<float> w(3, 0.0f);
  EXPECT_THROW(synthesize(net, std::span<const float>(w)), InvalidInput);
}

TEST(SynthesisOps, UpsampleAdjointDotProduct) {
  FeatureMap<double> x(2, 5), y(2, 10);
  auto rng = make_rng(4);
  for (auto& v : x.data) v = standard_normal(rng);
  for (auto& v : y.data) v = standard_normal(rng);
  const auto ux = detail::upsample2(x);
  const auto uty = detail::upsample2_adjoint(y);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) lhs += ux.data[i] * y.data[i];
  for (std::size_t i = 0; i < x.data.size(); ++i) rhs += x.data[i] * uty.data[i];
  EXPECT_NEAR(lhs, rhs, 1e-12 * std::abs(lhs));
}

TEST(SynthesisOps, UpsamplePreservesConstants) {
  FeatureMap<float> x(1, 4);
  std::fill(x.data.begin(), x.data.end(), 2.5f);
  for (float v : detail::upsample2(x).data) EXPECT_FLOAT_EQ(v, 2.5f);
}

TEST(SynthesisOps, ModulatedConvAdjointDotProduct) {
  auto rng = make_rng(5);
  auto conv = ModulatedConv<double>::make(3, 4, 3, 2);
  conv.randomize(rng, 2);
  FeatureMap<double> x(3, 6), gy(4, 6);
  for (auto& v : x.data) v = standard_normal(rng);
  for (auto& v : gy.data) v = standard_normal(rng);
  const std::vector<double> s{0.8, 1.2, -0.5};
  std::vector<double> gs(3, 0.0);
  const auto gx = detail::modconv_backward(conv, x, std::span<const double>(s), gy, std::span<double>(gs));
  // linear part in x: <conv(x) - bias, gy> = <x, gx>
  const auto y = detail::modconv_forward(conv, x, std::span<const double>(s));
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) lhs += (y.data[i] - conv.bias[i / 36]) * gy.data[i];
  for (std::size_t i = 0; i < x.data.size(); ++i) rhs += x.data[i] * gx.data[i];
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
  // and linear in each style component: sum_i s_i gs_i = same inner product
  double srhs = 0.0;
  for (int i = 0; i < 3; ++i) srhs += s[i] * gs[i];
  EXPECT_NEAR(lhs, srhs, 1e-10 * std::abs(lhs));
}

TEST(SynthesizeBackward, MatchesFiniteDifferences) {
  const auto cfg = tiny_config();
  const auto net = SynthesisNetwork<double>::random(cfg, 7);
  auto w = random_latent<double>(cfg.latent_dim, 8);
  const auto shape = synthesize(net, std::span<const double>(w));
  auto v = PyramidGradient<double>::zeros_like(shape);
  auto rng = make_rng(9);
  for (auto& l : v.levels)
    for (auto& x : l) x = standard_normal(rng);
  auto objective = [&](const std::vector<double>& lat) {
    const auto p = synthesize(net, std::span<const double>(lat));
    double s = 0.0;
    for (std::size_t l = 0; l < p.level_count(); ++l)
      for (std::size_t i = 0; i < p.level(l).size(); ++i) s += p.level(l).values()[i] * v.levels[l][i];
    return s;
  };
  SynthesisTrace<double> trace;
  synthesize(net, std::span<const double>(w), &trace);
  const auto g = synthesize_backward(net, trace, v);
  for (int k = 0; k < cfg.latent_dim; ++k) {
    const double saved = w[k];
    w[k] = saved + 1e-4;
    const double a = objective(w);
    w[k] = saved - 1e-4;
    const double b = objective(w);
    w[k] = saved;
    const double fd = (a - b) / 2e-4;
    EXPECT_LE(std::abs(fd - g[k]), 1e-6 * std::max(1.0, std::abs(fd))) << "component " << k;
  }
}

// d render(G(w), c, w) / dw through both the generator and the ToRGB modulation.
TEST(SynthesizeBackward, RenderThroughGeneratorMatchesFiniteDifferences) {
  const auto cfg = tiny_config();
  const auto net = SynthesisNetwork<double>::random(cfg, 11);
  const auto renderer = visible_renderer<double>(cfg.channels, cfg.latent_dim, 12);
  const CameraPose cam{30.0, 80.0, 2.7, 30.0, 4};
  Image<double> target(4, 4, 3, 0.3);
  InversionConfig icfg;
  icfg.latent_reg = 0.1;
  icfg.render.samples_per_ray = 8;
  auto w = random_latent<double>(cfg.latent_dim, 13);
  const std::vector<double> mean(cfg.latent_dim, 0.0);
  std::vector<double> grad;
  inversion_objective(net, renderer, target, cam, std::span<const double>(w), std::span<const double>(mean), icfg, &grad);
  double scale = 0.0;
  for (double g : grad) scale = std::max(scale, std::abs(g));
  ASSERT_GT(scale, 1e-6);
  for (int k = 0; k < cfg.latent_dim; ++k) {
    const double h = 1e-3;
    const double saved = w[k];
    w[k] = saved + h;
    const double a = inversion_objective(net, renderer, target, cam, std::span<const double>(w),
                                         std::span<const double>(mean), icfg);
    w[k] = saved - h;
    const double b = inversion_objective(net, renderer, target, cam, std::span<const double>(w),
                                         std::span<const double>(mean), icfg);
    w[k] = saved;
    const double fd = (a - b) / (2 * h);
    EXPECT_LE(std::abs(fd - grad[k]), 1e-3 * std::max({std::abs(fd), std::abs(grad[k]), 1e-6})) << k;
  }
}

struct InversionFixture {
  SynthesisConfig cfg;
  SynthesisNetwork<float> net;
  NeuralRenderer<float> renderer;
  CameraPose cam{0.0, 90.0, 2.7, 30.0, 12};
  std::vector<float> w0;
  Image<float> target;
  InversionConfig icfg;

  explicit InversionFixture(std::uint64_t seed) {
    cfg.resolutions = {8, 16};
    cfg.channels = 4;
    cfg.latent_dim = 8;
    cfg.backbone_channels = 8;
    net = SynthesisNetwork<float>::random(cfg, seed);
    renderer = visible_renderer<float>(cfg.channels, cfg.latent_dim, seed + 100);
    w0 = random_latent<float>(cfg.latent_dim, seed + 200, 0.5);
    icfg.render.samples_per_ray = 16;
    icfg.render_seed = seed;
    icfg.latent_reg = 0.0;
    const auto pyr = synthesize(net, std::span<const float>(w0));
    target = render(pyr, renderer, cam, std::span<const float>(w0), icfg.render_seed, icfg.render).rgb;
  }
};

TEST(Invert, TrueLatentIsFixedPoint) {
  InversionFixture f(1);
  f.icfg.iterations = 5;
  const auto res = invert(f.net, f.renderer, f.target, f.cam, std::span<const float>(f.w0), f.icfg);
  EXPECT_EQ(res.loss_trace.front(), 0.0);
  EXPECT_EQ(res.best_iteration, 0);
  EXPECT_EQ(res.latent, f.w0);
}

TEST(Invert, PerturbedStartReducesLoss) {
  InversionFixture f(2);
  f.icfg.iterations = 30;
  f.icfg.learning_rate = 0.01;
  auto w = f.w0;
  auto rng = make_rng(3);
  for (auto& v : w) v += static_cast<float>(0.01 * standard_normal(rng));
  // make the start clearly off the optimum so the decrease is measurable
  for (auto& v : w) v += 0.2f;
  const auto res = invert(f.net, f.renderer, f.target, f.cam, std::span<const float>(w), f.icfg);
  EXPECT_LT(res.best_loss, res.loss_trace.front());
  for (std::size_t i = 1; i < res.best_loss_trace.size(); ++i)
    EXPECT_LE(res.best_loss_trace[i], res.best_loss_trace[i - 1]);
}

TEST(Invert, RegularizationShrinksTowardMean) {
  for (std::uint64_t seed : {4u, 5u, 6u}) {
    InversionFixture f(seed);
    f.icfg.iterations = 25;
    f.icfg.learning_rate = 0.05;
    const std::vector<float> start(f.cfg.latent_dim, 0.3f);
    auto free_cfg = f.icfg;
    free_cfg.latent_reg = 0.0;
    auto reg_cfg = f.icfg;
    reg_cfg.latent_reg = 1e3;
    const auto a = invert(f.net, f.renderer, f.target, f.cam, std::span<const float>(start), free_cfg);
    const auto b = invert(f.net, f.renderer, f.target, f.cam, std::span<const float>(start), reg_cfg);
    auto norm2 = [](const std::vector<float>& v) {
      double s = 0;
      for (float x : v) s += double(x) * x;
      return std::sqrt(s);
    };
    EXPECT_LT(norm2(b.latent), norm2(a.latent)) << "seed " << seed;
  }
}

TEST(Invert, NonFiniteLossAborts) {
  InversionFixture f(7);
  f.icfg.iterations = 3;
  f.target.data[5] = std::numeric_limits<float>::quiet_NaN();
  try {
    invert(f.net, f.renderer, f.target, f.cam, std::span<const float>(f.w0), f.icfg);
    FAIL() << "expected InversionAborted";
  } catch (const InversionAborted& e) {
    EXPECT_EQ(e.loss_trace.size(), 1u);
  }
}

TEST(Invert, TargetSizeMismatchThrows) {
  InversionFixture f(8);
  Image<float> wrong(5, 5, 3);
  EXPECT_THROW(invert(f.net, f.renderer, wrong, f.cam, std::span<const float>(f.w0), f.icfg), InvalidInput);
}

}  // namespace
}  // namespace pyrtri
