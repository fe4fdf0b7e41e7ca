#pragma once

// Independent reference computations used only by the tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include "pyrtri/core/trigrid.hpp"

namespace pyrtri::oracle {

/// Texel-center interpolation written directly from the definition: sample position
/// s = (u + 1) / 2 * (n - 1), linear blend of floor(s) and floor(s) + 1.
inline double lerp_axis(const std::vector<double>& samples, double u) {
  const int n = static_cast<int>(samples.size());
  if (n == 1) return samples[0];
  const double s = (std::clamp(u, -1.0, 1.0) + 1.0) / 2.0 * (n - 1);
  int i = static_cast<int>(std::floor(s));
  if (i >= n - 1) i = n - 2;
  const double t = s - i;
  return (1.0 - t) * samples[i] + t * samples[i + 1];
}

/// Reference tri-grid query: separable interpolation per plane along col, row, then depth.
inline std::vector<double> query_trigrid(const TriGrid<double>& g, double x, double y, double z) {
  const double coords[3][3] = {{x, y, z}, {x, z, y}, {y, z, x}};
  std::vector<double> out(g.channels(), 0.0);
  const int n = g.resolution();
  for (int plane = 0; plane < 3; ++plane) {
    for (int c = 0; c < g.channels(); ++c) {
      std::vector<double> per_layer;
      for (int l = 0; l < g.depth_layers(); ++l) {
        std::vector<double> per_row;
        for (int r = 0; r < n; ++r) {
          std::vector<double> row;
          for (int col = 0; col < n; ++col) row.push_back(g.at(plane, l, c, r, col));
          per_row.push_back(lerp_axis(row, coords[plane][0]));
        }
        per_layer.push_back(lerp_axis(per_row, coords[plane][1]));
      }
      out[c] += lerp_axis(per_layer, coords[plane][2]);
    }
  }
  return out;
}

}  // namespace pyrtri::oracle
