#pragma once

#include <algorithm>
#include <cmath>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/image.hpp"

namespace pyrtri {

inline constexpr double kPsnrCap = 100.0;

template <typename T>
double mean_squared_error(const Image<T>& a, const Image<T>& b) {
  detail::require(a.same_shape(b), "images must have the same shape");
  detail::require(!a.data.empty(), "images must not be empty");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    s += d * d;
  }
  return s / a.data.size();
}

/// Peak-signal-to-noise ratio with peak 1, capped at 100 dB (identical images report the cap).
template <typename T>
double psnr(const Image<T>& a, const Image<T>& b) {
  const double mse = mean_squared_error(a, b);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

}  // namespace pyrtri
