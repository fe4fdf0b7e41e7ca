#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>

#include "pyrtri/analysis/ablation.hpp"
#include "pyrtri/analysis/marching_cubes.hpp"
#include "pyrtri/analysis/metrics.hpp"
#include "pyrtri/analysis/spectrum.hpp"
#include "pyrtri/core/random.hpp"
#include "pyrtri/render/renderer.hpp"

namespace pyrtri {
namespace {

// ---- power spectrum --------------------------------------------------------

TEST(PowerSpectrum, ConstantImageHasNoNonDcEnergy) {
  Image<float> img(32, 32, 3, 0.37f);
  const auto rep = power_spectrum(img);
  EXPECT_EQ(rep.high_band_ratio, 0.0);
  for (double p : rep.power) EXPECT_LE(p, 1e-20 * rep.dc_power + 1e-300);
  EXPECT_GT(rep.dc_power, 0.0);
}

TEST(PowerSpectrum, CheckerboardIsAllHighBand) {
  Image<double> img(32, 32, 1);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) img.at(r, c, 0) = ((r + c) % 2) ? 1.0 : 0.0;
  const auto rep = power_spectrum(img);
  EXPECT_GE(rep.high_band_ratio, 0.99);
}

TEST(PowerSpectrum, LowFrequencyCosineIsLowBand) {
  Image<double> img(64, 64, 1);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) img.at(r, c, 0) = std::cos(2 * std::numbers::pi * 3 * c / 64.0);
  const auto rep = power_spectrum(img);
  EXPECT_LE(rep.high_band_ratio, 1e-12);
  // all energy at |f| = 3/64, bin width 1/64
  EXPECT_NEAR(rep.power[3] / rep.total_power, 1.0, 1e-12);
}

TEST(PowerSpectrum, ParsevalAgainstSpatialVariance) {
  auto rng = make_rng(7);
  for (int n : {16, 31, 64}) {
    Image<double> img(n, n, 1);
    for (auto& v : img.data) v = uniform01(rng);
    double mean = 0.0;
    for (double v : img.data) mean += v;
    mean /= img.data.size();
    double var = 0.0;
    for (double v : img.data) var += (v - mean) * (v - mean);
    var /= img.data.size();
    const auto rep = power_spectrum(img);
    double bins = 0.0;
    for (double p : rep.power) bins += p;
    const double expected = var * img.data.size();
    EXPECT_NEAR(bins, expected, 1e-4 * expected) << n;
    EXPECT_NEAR(rep.dc_power, mean * mean * img.data.size(), 1e-9 * rep.dc_power);
  }
}

TEST(PowerSpectrum, BinsCoverHalfNyquistRange) {
  const auto rep = power_spectrum(Image<double>(16, 16, 1, 1.0));
  ASSERT_EQ(rep.bin_centers.size(), 8u);
  EXPECT_DOUBLE_EQ(rep.bin_centers.front(), 0.5 / 16);
  EXPECT_DOUBLE_EQ(rep.bin_centers.back(), 0.5 - 0.5 / 16);
}

TEST(PowerSpectrum, RatioWithinUnitInterval) {
  auto rng = make_rng(8);
  Image<float> img(24, 24, 3);
  for (auto& v : img.data) v = static_cast<float>(uniform01(rng));
  const auto rep = power_spectrum(img);
  EXPECT_GE(rep.high_band_ratio, 0.0);
  EXPECT_LE(rep.high_band_ratio, 1.0);
  for (double p : rep.power) EXPECT_GE(p, 0.0);
}

TEST(PowerSpectrum, RejectsNonSquare) { EXPECT_THROW(power_spectrum(Image<float>(8, 9, 1)), InvalidInput); }

// ---- psnr ------------------------------------------------------------------

TEST(Psnr, IdenticalImagesHitTheCap) {
  Image<float> a(8, 8, 3, 0.5f);
  EXPECT_EQ(psnr(a, a), 100.0);
}

TEST(Psnr, UniformOffsetOfOneTenthIsTwentyDb) {
  auto rng = make_rng(1);
  Image<double> a(16, 16, 3), b(16, 16, 3);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    a.data[i] = 0.8 * uniform01(rng);
    b.data[i] = a.data[i] + 0.1;
  }
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
}

TEST(Psnr, MatchesDirectFormula) {
  auto rng = make_rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    Image<double> a(9, 7, 3), b(9, 7, 3);
    for (auto& v : a.data) v = uniform01(rng);
    for (auto& v : b.data) v = uniform01(rng);
    long double s = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += (long double)(a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    const double expected = 10.0 * std::log10(1.0 / double(s / a.data.size()));
    EXPECT_NEAR(psnr(a, b), expected, 1e-9);
  }
}

TEST(Psnr, ShapeMismatchThrows) { EXPECT_THROW(psnr(Image<float>(2, 2, 3), Image<float>(2, 3, 3)), InvalidInput); }

// ---- marching cubes --------------------------------------------------------

double sphere_density(const Vec3<double>& p) { return 0.5 - norm(p); }

TEST(MarchingCubes, CaseTableIsClosedPerCell) {
  const auto& table = detail::case_table();
  EXPECT_TRUE(table[0].triangles.empty());
  EXPECT_TRUE(table[255].triangles.empty());
  for (int mask = 1; mask < 255; ++mask) {
    EXPECT_FALSE(table[mask].triangles.empty()) << mask;
    std::map<std::pair<int, int>, int> directed;
    for (const auto& t : table[mask].triangles)
      for (int k = 0; k < 3; ++k) ++directed[{t[k], t[(k + 1) % 3]}];
    for (const auto& [e, n] : directed) EXPECT_EQ(n, 1) << mask;
  }
  EXPECT_EQ(table[1].triangles.size(), 1u);
  EXPECT_EQ(table[3].triangles.size(), 2u);     // two adjacent corners: quad
  EXPECT_EQ(table[0x0f].triangles.size(), 2u);  // half cube: quad
  EXPECT_EQ(table[0x81].loops.size(), 2u);      // opposite corners: two separate caps
}

TEST(MarchingCubes, SphereVerticesWithinOneCell) {
  const auto lat = sample_lattice(sphere_density, 64);
  const auto mesh = marching_cubes(lat, 0.0);
  ASSERT_FALSE(mesh.empty());
  double worst = 0.0;
  for (const auto& v : mesh.vertices) worst = std::max(worst, std::abs(norm(v) - 0.5));
  EXPECT_LE(worst, lat.spacing());
  // linear interpolation of an exact distance is far tighter than a cell
  EXPECT_LE(worst, 0.05 * lat.spacing());
}

TEST(MarchingCubes, SphereIsWatertightAndOutwardFacing) {
  for (int n : {9, 20, 64}) {
    const auto lat = sample_lattice(sphere_density, n);
    const auto mesh = marching_cubes(lat, 0.0);
    EXPECT_TRUE(is_watertight(mesh)) << n;
    double volume = 0.0;  // divergence theorem, positive for outward normals
    for (const auto& t : mesh.triangles)
      volume += dot(mesh.vertices[t[0]], cross(mesh.vertices[t[1]], mesh.vertices[t[2]])) / 6.0;
    const double exact = 4.0 / 3.0 * std::numbers::pi * 0.125;
    EXPECT_GT(volume, 0.0) << n;
    if (n == 64) {
      EXPECT_NEAR(volume, exact, 0.01 * exact);
    }
  }
}

TEST(MarchingCubes, SaddleAndRandomFieldsAreWatertight) {
  auto rng = make_rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    ScalarLattice lat{12, std::vector<double>(12 * 12 * 12)};
    for (auto& v : lat.values) v = uniform01(rng);
    // force the border below iso so every component closes inside the box
    for (int z = 0; z < 12; ++z)
      for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 12; ++x)
          if (x == 0 || y == 0 || z == 0 || x == 11 || y == 11 || z == 11)
            lat.values[(z * 12 + y) * 12 + x] = 0.0;
    const auto mesh = marching_cubes(lat, 0.5);
    EXPECT_FALSE(mesh.empty());
    EXPECT_TRUE(is_watertight(mesh)) << trial;
  }
}

TEST(MarchingCubes, IsoAboveMaximumGivesEmptyMesh) {
  const auto lat = sample_lattice(sphere_density, 16);
  EXPECT_TRUE(marching_cubes(lat, 0.6).empty());
}

TEST(MarchingCubes, ObjExport) {
  const auto mesh = marching_cubes(sample_lattice(sphere_density, 8), 0.0);
  const auto obj = to_obj(mesh);
  std::size_t v = 0, f = 0;
  std::istringstream in(obj);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("v ", 0) == 0) ++v;
    if (line.rfind("f ", 0) == 0) ++f;
  }
  EXPECT_EQ(v, mesh.vertices.size());
  EXPECT_EQ(f, mesh.triangles.size());
  EXPECT_EQ(to_obj(Mesh{}), "");
}

TEST(ExtractMesh, LatticeEqualsQueryPlusDecoder) {
  PyramidTriGrid<float> pyr({4, 8}, 4);
  auto rng = make_rng(4);
  for (auto& l : pyr.levels())
    for (auto& v : l.values()) v = static_cast<float>(standard_normal(rng));
  auto dec = DecoderParams<float>::random(4, 5, 16, 4);
  const auto lat = density_lattice(pyr, dec, 9);
  PyramidField<float> field(pyr, dec);
  for (int z = 0; z < 9; ++z)
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 9; ++x) {
        const Point3<float> p{float(lat.coord(x)), float(lat.coord(y)), float(lat.coord(z))};
        EXPECT_EQ(lat.at(x, y, z), double(field.density(p)));
      }
}

TEST(ExtractMesh, ZeroGridIsEmpty) {
  PyramidTriGrid<float> pyr({8, 16}, 4);
  auto dec = DecoderParams<float>::zeros(4, 16, 4);
  const auto rep = extract_mesh(pyr, dec, 16, 10.0);
  EXPECT_TRUE(rep.empty);
  EXPECT_EQ(rep.min_density, rep.max_density);
  EXPECT_THROW(extract_mesh(pyr, dec, 4, 1.0), InvalidInput);
}

// ---- ablation --------------------------------------------------------------

AblationConfig short_ablation() {
  AblationConfig cfg;
  cfg.image_size = 16;
  cfg.fit.steps = 15;
  cfg.fit.rays_per_step = 64;
  cfg.fit.render.samples_per_ray = 12;
  return cfg;
}

TEST(Ablation, DeterministicPerSeedWithMatchedArms) {
  const auto cfg = short_ablation();
  const auto a = artifact_ablation(4, cfg);
  const auto b = artifact_ablation(4, cfg);
  EXPECT_TRUE(a.configs_match);
  EXPECT_EQ(a.to_csv(), b.to_csv());
  EXPECT_EQ(a.single.resolutions, std::vector<int>{32});
  EXPECT_EQ(a.pyramid.resolutions, (std::vector<int>{8, 16, 32}));
  EXPECT_EQ(a.fit.supervision_noise, cfg.noise);
  EXPECT_NE(a.to_csv(), artifact_ablation(5, cfg).to_csv());
  for (const auto* arm : {&a.single, &a.pyramid}) {
    EXPECT_GE(arm->high_band_ratio, 0.0);
    EXPECT_LE(arm->high_band_ratio, 1.0);
  }
}

}  // namespace
}  // namespace pyrtri
