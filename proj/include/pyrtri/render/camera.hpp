#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/vec.hpp"

namespace pyrtri {

/// Spherical camera looking at the origin with +Z as world up.
/// `polar_deg` is measured from the +Z zenith, so 90 is a horizontal view.
struct CameraPose {
  double azimuth_deg = 0.0;
  double polar_deg = 90.0;
  double radius = 2.7;
  double fov_y_deg = 30.0;
  int image_size = 64;

  void validate() const {
    detail::require(std::isfinite(azimuth_deg) && std::isfinite(polar_deg), "camera angles must be finite");
    detail::require(fov_y_deg > 0.0 && fov_y_deg < 180.0, "fov_y must lie in (0, 180)");
    detail::require(radius > 0.0 && std::isfinite(radius), "camera radius must be positive");
    detail::require(image_size >= 1, "image size must be at least 1");
  }

  Vec3<double> position() const {
    const double az = azimuth_deg * std::numbers::pi / 180.0;
    const double po = polar_deg * std::numbers::pi / 180.0;
    return {radius * std::sin(po) * std::cos(az), radius * std::sin(po) * std::sin(az), radius * std::cos(po)};
  }

  bool operator==(const CameraPose&) const = default;
};

struct RayBatch {
  std::vector<Vec3<double>> origins;
  std::vector<Vec3<double>> directions;
  double near = 0.0;
  double far = 1.0;
  int height = 0;  // image layout when the batch comes from a camera; height 1 otherwise
  int width = 0;

  std::size_t size() const { return origins.size(); }

  void validate() const {
    detail::require(origins.size() == directions.size(), "ray origin/direction count mismatch");
    detail::require(near < far, "ray batch needs near < far");
    detail::require(static_cast<std::size_t>(height) * width == origins.size(), "ray batch layout mismatch");
  }

  /// Subset of rays in the given order, laid out as a 1 x n strip.
  RayBatch select(const std::vector<std::size_t>& indices) const {
    RayBatch out;
    out.near = near;
    out.far = far;
    out.height = 1;
    out.width = static_cast<int>(indices.size());
    for (auto i : indices) {
      out.origins.push_back(origins.at(i));
      out.directions.push_back(directions.at(i));
    }
    return out;
  }
};

/// Distance between the scene center and the near/far march bounds.
inline constexpr double kDefaultBoundMargin = 1.3;

/// Pixel-centered pinhole rays. At the poles (polar 0 or 180) the look direction is
/// parallel to +Z; the up vector then falls back to +Y.
inline RayBatch camera_rays(const CameraPose& pose, double bound_margin = kDefaultBoundMargin) {
  pose.validate();
  const Vec3<double> eye = pose.position();
  const Vec3<double> forward = normalized(-eye);
  Vec3<double> up{0.0, 0.0, 1.0};
  if (norm(cross(forward, up)) < 1e-9) up = {0.0, 1.0, 0.0};
  const Vec3<double> right = normalized(cross(forward, up));
  const Vec3<double> cam_up = cross(right, forward);
  const double tan_half = std::tan(0.5 * pose.fov_y_deg * std::numbers::pi / 180.0);

  RayBatch batch;
  const int n = pose.image_size;
  batch.height = n;
  batch.width = n;
  batch.near = std::max(1e-3, pose.radius - bound_margin);
  batch.far = pose.radius + bound_margin;
  batch.origins.assign(static_cast<std::size_t>(n) * n, eye);
  batch.directions.reserve(static_cast<std::size_t>(n) * n);
  for (int row = 0; row < n; ++row) {
    const double y = (1.0 - 2.0 * (row + 0.5) / n) * tan_half;
    for (int col = 0; col < n; ++col) {
      const double x = (2.0 * (col + 0.5) / n - 1.0) * tan_half;
      batch.directions.push_back(normalized(forward + right * x + cam_up * y));
    }
  }
  return batch;
}

}  // namespace pyrtri
