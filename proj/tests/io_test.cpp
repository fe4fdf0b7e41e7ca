#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "pyrtri/core/random.hpp"
#include "pyrtri/io/config.hpp"
#include "pyrtri/io/grid_file.hpp"
#include "pyrtri/io/image_io.hpp"
#include "pyrtri/io/weights.hpp"

namespace pyrtri {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("pyrtri_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

PyramidTriGrid<float> random_pyramid(std::uint64_t seed) {
  PyramidTriGrid<float> pyr({4, 8}, 3, 2);
  auto rng = make_rng(seed, 0x9f);
  for (auto& l : pyr.levels())
    for (auto& v : l.values()) v = static_cast<float>(standard_normal(rng));
  return pyr;
}

std::uint32_t u32_at(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[off + i]);
  return v;
}

TEST(GridFile, RoundTripIsBitExact) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto pyr = random_pyramid(seed);
    pyr.levels()[0].values()[5] = -0.0f;
    pyr.levels()[1].values()[7] = std::numeric_limits<float>::denorm_min();
    const auto bytes = encode_grid(pyr);
    const auto back = decode_grid(bytes);
    ASSERT_EQ(back.level_count(), pyr.level_count());
    for (std::size_t l = 0; l < pyr.level_count(); ++l) {
      const auto a = pyr.levels()[l].values();
      const auto b = back.levels()[l].values();
      ASSERT_EQ(a.size(), b.size());
      for (std::size_t i = 0; i < a.size(); ++i)
        ASSERT_EQ(std::bit_cast<std::uint32_t>(a[i]), std::bit_cast<std::uint32_t>(b[i]));
    }
    EXPECT_EQ(encode_grid(back), bytes);
  }
}

TEST(GridFile, HeaderLayout) {
  const auto pyr = random_pyramid(4);
  const auto bytes = encode_grid(pyr);
  EXPECT_EQ(bytes.substr(0, 4), "PTG1");
  EXPECT_EQ(u32_at(bytes, 4), 1u);
  EXPECT_EQ(u32_at(bytes, 8), 2u);
  EXPECT_EQ(u32_at(bytes, 12), 4u);
  EXPECT_EQ(u32_at(bytes, 16), 2u);
  EXPECT_EQ(u32_at(bytes, 20), 3u);
  EXPECT_EQ(u32_at(bytes, 24), 8u);
  const std::size_t payload = 3 * 2 * 3 * (16 + 64);
  ASSERT_EQ(bytes.size(), 36 + 4 * payload);
  float first = 0;
  std::memcpy(&first, bytes.data() + 36, 4);
  EXPECT_EQ(first, pyr.levels()[0].values()[0]);
}

TEST(GridFile, RejectsCorruptInput) {
  const auto good = encode_grid(random_pyramid(5));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_grid(bad_magic), IoError);
  auto bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(decode_grid(bad_version), IoError);
  EXPECT_THROW(decode_grid(good.substr(0, good.size() - 1)), IoError);
  EXPECT_THROW(decode_grid(good + "x"), IoError);
  EXPECT_THROW(decode_grid(""), IoError);
  auto nan = good;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + 40, &q, 4);
  EXPECT_THROW(decode_grid(nan), IoError);
  auto inf = good;
  const float i = std::numeric_limits<float>::infinity();
  std::memcpy(inf.data() + good.size() - 4, &i, 4);
  EXPECT_THROW(decode_grid(inf), IoError);
}

TEST(GridFile, SaveLoadThroughDisk) {
  const auto dir = scratch("grid");
  const auto pyr = random_pyramid(6);
  save_grid(dir / "sub" / "g.ptg", pyr);
  EXPECT_EQ(load_grid(dir / "sub" / "g.ptg"), pyr);
  EXPECT_THROW(load_grid(dir / "missing.ptg"), IoError);
}

TEST(Files, AtomicWriteReplacesAndLeavesNoTemp) {
  const auto dir = scratch("atomic");
  atomic_write(dir / "a.txt", "first");
  atomic_write(dir / "a.txt", "second");
  EXPECT_EQ(read_file(dir / "a.txt"), "second");
  int entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++entries;
  EXPECT_EQ(entries, 1);
}

Image<float> gradient_image(int h, int w) {
  Image<float> img(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = float((y * 7 + x * 3 + c * 50) % 256) / 255.0f;
  return img;
}

TEST(ImageIo, PngRoundTripOf8BitValues) {
  const auto dir = scratch("png");
  const auto img = gradient_image(9, 13);
  write_png(dir / "a.png", img);
  const auto back = read_png(dir / "a.png");
  ASSERT_EQ(back.height, 9);
  ASSERT_EQ(back.width, 13);
  ASSERT_EQ(back.channels, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 1e-6);
}

TEST(ImageIo, PngClampsAndQuantizes) {
  const auto dir = scratch("pngq");
  Image<float> img(1, 3, 3);
  img.data = {-1.f, 0.5f, 2.f, 0.f, 1.f, 0.25f, 0.1f, 0.2f, 0.3f};
  write_png(dir / "q.png", img);
  const auto back = read_png(dir / "q.png");
  EXPECT_EQ(back.data[0], 0.f);
  EXPECT_EQ(back.data[2], 1.f);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    EXPECT_NEAR(back.data[i], std::clamp(img.data[i], 0.f, 1.f), 0.5 / 255 + 1e-6);
}

TEST(ImageIo, SidecarIsLossless) {
  const auto dir = scratch("pgim");
  auto img = gradient_image(5, 4);
  img.data[3] = 0.123456789f;
  img.data[4] = 1.75f;
  write_image_pair(dir / "v.png", img);
  EXPECT_TRUE(fs::exists(dir / "v.png"));
  EXPECT_TRUE(fs::exists(dir / "v.pgim"));
  EXPECT_EQ(load_image(dir / "v.pgim"), img);
  EXPECT_EQ(decode_pgim(encode_pgim(img)), img);
}

TEST(ImageIo, GarbageIsRejected) {
  const auto dir = scratch("garbage");
  atomic_write(dir / "x.png", "definitely not a png");
  EXPECT_THROW(read_png(dir / "x.png"), IoError);
  atomic_write(dir / "x.pgim", "PGIM");
  EXPECT_THROW(load_image(dir / "x.pgim"), IoError);
}

TEST(Weights, RendererRoundTrip) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto r = NeuralRenderer<float>::random(6, 5, seed, 16, 4);
    r.to_rgb.background = {0.1f, 0.2f, 0.3f};
    r.to_rgb.bias = {0.01f, -0.02f, 0.03f};
    const auto bytes = encode_renderer(r);
    EXPECT_EQ(decode_renderer(bytes), r);
  }
}

TEST(Weights, NetworkRoundTripSynthesizesIdentically) {
  SynthesisConfig cfg;
  cfg.resolutions = {4, 8};
  cfg.channels = 2;
  cfg.latent_dim = 4;
  cfg.backbone_channels = 3;
  const auto net = SynthesisNetwork<float>::random(cfg, 7);
  const auto bytes = encode_network(net);
  const auto back = decode_network(bytes);
  EXPECT_EQ(encode_network(back), bytes);
  const std::vector<float> w{0.3f, -0.2f, 0.5f, 1.0f};
  EXPECT_EQ(synthesize(back, std::span<const float>(w)), synthesize(net, std::span<const float>(w)));
}

TEST(Weights, WrongKindAndTruncationRejected) {
  const auto r = encode_renderer(NeuralRenderer<float>::random(4, 3, 1, 8, 4));
  EXPECT_THROW(decode_network(r), IoError);
  EXPECT_THROW(decode_renderer(r.substr(0, r.size() - 3)), IoError);
  EXPECT_THROW(decode_renderer(r + "zz"), IoError);
}

TEST(Config, DefaultsParseAndValidate) {
  const auto c = parse_config("");
  EXPECT_EQ(c.resolutions, (std::vector<int>{8, 16, 32, 64}));
  EXPECT_EQ(c.refine.noise_level, 0.4);
  EXPECT_EQ(c.provider, "oracle");
}

TEST(Config, ReadsValues) {
  const auto c = parse_config(
      "# comment\n"
      "[run]\nseed = 42\ndeterministic = true\nprompt = a red chair\n"
      "[pyramid]\nresolutions = 4, 8, 16\nchannels = 6\n"
      "[sds]\nsteps = 7\nweighting = variance\n"
      "; another\n[refine]\nnoise_level = 0.25\n"
      "[provider]\nkind = remote:http://127.0.0.1:9000\n");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_TRUE(c.deterministic);
  EXPECT_EQ(c.exec().threads, 1);
  EXPECT_EQ(c.resolutions, (std::vector<int>{4, 8, 16}));
  EXPECT_EQ(c.channels, 6);
  EXPECT_EQ(c.sds.steps, 7);
  EXPECT_EQ(c.sds.weighting, SdsWeighting::Variance);
  EXPECT_EQ(c.sds.prompt, "a red chair");
  EXPECT_EQ(c.refine.prompt, "a red chair");
  EXPECT_EQ(c.refine.noise_level, 0.25);
  EXPECT_EQ(c.provider, "remote:http://127.0.0.1:9000");
}

int error_line(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

TEST(Config, UnknownKeyReportsLine) {
  EXPECT_EQ(error_line("[run]\nseed = 1\n\nsede = 2\n"), 4);
  EXPECT_EQ(error_line("[nope]\n"), 1);
  EXPECT_EQ(error_line("seed = 1\n"), 1);
  EXPECT_EQ(error_line("[run]\njust words\n"), 2);
  EXPECT_EQ(error_line("[run]\nseed = 1\nseed = 2\n"), 3);
  EXPECT_EQ(error_line("[run\n"), 1);
}

TEST(Config, OutOfRangeReportsLine) {
  EXPECT_EQ(error_line("[refine]\nsteps = 3\nnoise_level = 1.5\n"), 3);
  EXPECT_EQ(error_line("[refine]\nnoise_level = 1.0\n"), 2);
  EXPECT_EQ(error_line("[render]\nsamples_per_ray = 1\n"), 2);
  EXPECT_EQ(error_line("[fit]\nlearning_rate = 0\n"), 2);
  EXPECT_EQ(error_line("[sds]\nt_min = 0.5\nt_max = 0.4\n"), 3);
  EXPECT_EQ(error_line("[pyramid]\nresolutions = 8, 24\n"), 2);
  EXPECT_EQ(error_line("[run]\nseed = -3\n"), 2);
  EXPECT_EQ(error_line("[run]\nthreads = two\n"), 2);
  EXPECT_EQ(error_line("[provider]\nkind = magic\n"), 2);
}

}  // namespace
}  // namespace pyrtri
