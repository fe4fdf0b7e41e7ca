#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pyrtri/core/random.hpp"
#include "pyrtri/render/camera.hpp"

namespace pyrtri {

/// Polar-angle bands (degrees from +Z) of the multi-view protocol.
inline constexpr std::array<std::array<double, 2>, 3> kPolarBands{{{55.0, 65.0}, {85.0, 95.0}, {115.0, 125.0}}};
inline constexpr int kProtocolAzimuths = 7;

/// 7 evenly spaced azimuths times one polar angle drawn from each band: 21 poses,
/// azimuth-major. Radius, fov and image size come from `base`.
inline std::vector<CameraPose> protocol_21_views(const CameraPose& base, std::uint64_t seed) {
  auto rng = make_rng(seed, 0x21);
  std::vector<CameraPose> views;
  views.reserve(kProtocolAzimuths * kPolarBands.size());
  for (int k = 0; k < kProtocolAzimuths; ++k) {
    for (const auto& band : kPolarBands) {
      CameraPose p = base;
      p.azimuth_deg = k * (360.0 / kProtocolAzimuths);
      p.polar_deg = uniform(rng, band[0], band[1]);
      views.push_back(p);
    }
  }
  return views;
}

/// Evenly spaced azimuths at the base polar angle.
inline std::vector<CameraPose> turntable(const CameraPose& base, int frames = 36) {
  std::vector<CameraPose> views;
  for (int i = 0; i < frames; ++i) {
    CameraPose p = base;
    p.azimuth_deg = i * (360.0 / frames);
    views.push_back(p);
  }
  return views;
}

/// Random camera for one SDS step: azimuth in [0, 360), polar from a uniformly chosen band.
inline CameraPose sample_band_camera(const CameraPose& base, Rng& rng) {
  CameraPose p = base;
  p.azimuth_deg = uniform(rng, 0.0, 360.0);
  const auto band = kPolarBands[std::min<std::size_t>(2, static_cast<std::size_t>(uniform01(rng) * 3.0))];
  p.polar_deg = uniform(rng, band[0], band[1]);
  return p;
}

}  // namespace pyrtri
