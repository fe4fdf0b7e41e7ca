#pragma once

#include <cmath>
#include <complex>
#include <memory>
#include <vector>

#include <fftw3.h>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/image.hpp"

namespace pyrtri {

struct SpectrumReport {
  int size = 0;                       // N, for an N x N image
  std::vector<double> bin_centers;    // normalized frequency, cycles per pixel, in [0, 0.5]
  std::vector<double> power;          // summed power per radial bin, DC excluded
  double dc_power = 0.0;
  double total_power = 0.0;           // sum of all non-DC power
  double cutoff = 0.25;
  double high_band_ratio = 0.0;       // non-DC power above the cutoff / total non-DC power
};

namespace detail {

struct FftwPlanDeleter {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};
struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace detail

/// Radially binned power of the 2D DFT of a square image (RGB is converted to luma).
/// Power of frequency k is |F_k|^2 / N^2, so the non-DC total equals N^2 times the pixel variance.
/// Bins split [0, 0.5] evenly; the diagonal frequencies beyond 0.5 land in the last bin.
/// A spectrum whose non-DC total is at round-off level reports ratio 0.
template <typename T>
SpectrumReport power_spectrum(const Image<T>& image, double cutoff = 0.25, int bins = 0) {
  detail::require(image.height == image.width && image.height > 0, "power spectrum needs a square image");
  detail::require(cutoff > 0.0 && cutoff <= 0.5, "spectrum cutoff must lie in (0, 0.5]");
  const Image<T> luma = to_luma(image);
  const int n = luma.height;
  if (bins <= 0) bins = std::max(1, n / 2);

  const std::size_t count = static_cast<std::size_t>(n) * n;
  std::unique_ptr<fftw_complex[], detail::FftwFree> buf(fftw_alloc_complex(count));
  std::unique_ptr<fftw_plan_s, detail::FftwPlanDeleter> plan(
      fftw_plan_dft_2d(n, n, buf.get(), buf.get(), FFTW_FORWARD, FFTW_ESTIMATE));
  for (std::size_t i = 0; i < count; ++i) {
    detail::require(std::isfinite(double(luma.data[i])), "power spectrum input must be finite");
    buf[i][0] = static_cast<double>(luma.data[i]);
    buf[i][1] = 0.0;
  }
  fftw_execute(plan.get());

  SpectrumReport rep;
  rep.size = n;
  rep.cutoff = cutoff;
  rep.power.assign(bins, 0.0);
  for (int b = 0; b < bins; ++b) rep.bin_centers.push_back((b + 0.5) * 0.5 / bins);
  const double norm = 1.0 / double(count);
  double high = 0.0, sum_abs = 0.0;
  for (int ky = 0; ky < n; ++ky) {
    const double fy = (ky <= n / 2 ? ky : ky - n) / double(n);
    for (int kx = 0; kx < n; ++kx) {
      const double fx = (kx <= n / 2 ? kx : kx - n) / double(n);
      const auto& c = buf[static_cast<std::size_t>(ky) * n + kx];
      const double p = (c[0] * c[0] + c[1] * c[1]) * norm;
      sum_abs += p;
      if (kx == 0 && ky == 0) {
        rep.dc_power = p;
        continue;
      }
      const double r = std::sqrt(fx * fx + fy * fy);
      const int b = std::min(bins - 1, static_cast<int>(r / 0.5 * bins));
      rep.power[b] += p;
      rep.total_power += p;
      if (r > cutoff) high += p;
    }
  }
  // float round-off of a constant image leaves ~1e-14 relative energy off DC
  if (rep.total_power > 1e-12 * sum_abs) rep.high_band_ratio = high / rep.total_power;
  return rep;
}

}  // namespace pyrtri
