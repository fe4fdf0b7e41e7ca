#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/vec.hpp"

namespace pyrtri {

/// Axis-aligned feature planes. Each plane stores `depth_layers` slices stacked
/// along its normal axis.
///   XY: col <- x, row <- y, normal z
///   XZ: col <- x, row <- z, normal y
///   YZ: col <- y, row <- z, normal x
enum class Plane : int { XY = 0, XZ = 1, YZ = 2 };

inline constexpr int kPlaneCount = 3;

inline constexpr bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

/// Dense tri-grid, values indexed [plane][layer][channel][row][col].
template <typename T>
class TriGrid {
 public:
  TriGrid() = default;

  TriGrid(int resolution, int channels, int depth_layers = 3, T fill = T(0))
      : resolution_(resolution), channels_(channels), depth_layers_(depth_layers) {
    detail::require(resolution >= 2 && is_power_of_two(resolution),
                    "tri-grid resolution must be a power of two >= 2, got " + std::to_string(resolution));
    detail::require(channels >= 1, "tri-grid needs at least one channel");
    detail::require(depth_layers >= 1, "tri-grid needs at least one depth layer");
    values_.assign(expected_size(), fill);
  }

  int resolution() const { return resolution_; }
  int channels() const { return channels_; }
  int depth_layers() const { return depth_layers_; }

  std::size_t plane_stride() const { return static_cast<std::size_t>(depth_layers_) * layer_stride(); }
  std::size_t layer_stride() const { return static_cast<std::size_t>(channels_) * channel_stride(); }
  std::size_t channel_stride() const {
    return static_cast<std::size_t>(resolution_) * static_cast<std::size_t>(resolution_);
  }
  std::size_t expected_size() const { return kPlaneCount * plane_stride(); }

  std::size_t index(int plane, int layer, int channel, int row, int col) const {
    return plane * plane_stride() + layer * layer_stride() + channel * channel_stride() +
           static_cast<std::size_t>(row) * resolution_ + col;
  }

  T& at(int plane, int layer, int channel, int row, int col) {
    return values_[index(plane, layer, channel, row, col)];
  }
  const T& at(int plane, int layer, int channel, int row, int col) const {
    return values_[index(plane, layer, channel, row, col)];
  }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
  }

  void validate() const {
    detail::require(values_.size() == expected_size(), "tri-grid value count does not match its shape");
    detail::require(resolution_ >= 2 && is_power_of_two(resolution_), "tri-grid resolution must be a power of two >= 2");
    detail::require(all_finite(), "tri-grid contains non-finite values");
  }

  bool same_shape(const TriGrid& o) const {
    return resolution_ == o.resolution_ && channels_ == o.channels_ && depth_layers_ == o.depth_layers_;
  }

  template <typename U>
  TriGrid<U> cast() const {
    TriGrid<U> out(resolution_, channels_, depth_layers_);
    auto dst = out.values();
    for (std::size_t i = 0; i < values_.size(); ++i) dst[i] = static_cast<U>(values_[i]);
    return out;
  }

  bool operator==(const TriGrid&) const = default;

 private:
  int resolution_ = 0;
  int channels_ = 0;
  int depth_layers_ = 0;
  std::vector<T> values_;
};

/// Ordered tri-grids with strictly increasing resolutions and shared channels/depth.
/// Queried features of all levels are summed.
template <typename T>
class PyramidTriGrid {
 public:
  PyramidTriGrid() = default;

  PyramidTriGrid(std::span<const int> resolutions, int channels, int depth_layers = 3, T fill = T(0)) {
    detail::require(!resolutions.empty(), "pyramid needs at least one level");
    levels_.reserve(resolutions.size());
    for (int r : resolutions) levels_.emplace_back(r, channels, depth_layers, fill);
    check_structure();
  }
  PyramidTriGrid(std::initializer_list<int> resolutions, int channels, int depth_layers = 3, T fill = T(0))
      : PyramidTriGrid(std::span<const int>(resolutions.begin(), resolutions.size()), channels, depth_layers, fill) {}

  explicit PyramidTriGrid(std::vector<TriGrid<T>> levels) : levels_(std::move(levels)) { check_structure(); }

  std::size_t level_count() const { return levels_.size(); }
  TriGrid<T>& level(std::size_t i) { return levels_[i]; }
  const TriGrid<T>& level(std::size_t i) const { return levels_[i]; }
  std::span<TriGrid<T>> levels() { return levels_; }
  std::span<const TriGrid<T>> levels() const { return levels_; }

  int channels() const { return levels_.empty() ? 0 : levels_.front().channels(); }
  int depth_layers() const { return levels_.empty() ? 0 : levels_.front().depth_layers(); }

  std::vector<int> resolutions() const {
    std::vector<int> r;
    for (const auto& l : levels_) r.push_back(l.resolution());
    return r;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& l : levels_) n += l.size();
    return n;
  }

  bool all_finite() const {
    return std::all_of(levels_.begin(), levels_.end(), [](const auto& l) { return l.all_finite(); });
  }

  void validate() const {
    check_structure();
    for (const auto& l : levels_) l.validate();
  }

  bool same_shape(const PyramidTriGrid& o) const {
    if (levels_.size() != o.levels_.size()) return false;
    for (std::size_t i = 0; i < levels_.size(); ++i)
      if (!levels_[i].same_shape(o.levels_[i])) return false;
    return true;
  }

  template <typename U>
  PyramidTriGrid<U> cast() const {
    std::vector<TriGrid<U>> out;
    for (const auto& l : levels_) out.push_back(l.template cast<U>());
    return PyramidTriGrid<U>(std::move(out));
  }

  /// Element-wise sum of two identically shaped pyramids.
  friend PyramidTriGrid operator+(const PyramidTriGrid& a, const PyramidTriGrid& b) {
    detail::require(a.same_shape(b), "pyramid shapes differ");
    PyramidTriGrid out = a;
    for (std::size_t l = 0; l < a.levels_.size(); ++l) {
      auto dst = out.levels_[l].values();
      auto src = b.levels_[l].values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    return out;
  }

  bool operator==(const PyramidTriGrid&) const = default;

 private:
  void check_structure() const {
    detail::require(!levels_.empty(), "pyramid needs at least one level");
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      detail::require(levels_[i].channels() == levels_[0].channels(), "pyramid levels must share channels");
      detail::require(levels_[i].depth_layers() == levels_[0].depth_layers(),
                      "pyramid levels must share depth layers");
      if (i > 0)
        detail::require(levels_[i].resolution() > levels_[i - 1].resolution(),
                        "pyramid resolutions must be strictly increasing");
    }
  }

  std::vector<TriGrid<T>> levels_;
};

/// Default pyramid used by the generator: resolutions 8..512, 12 channels, 3 depth layers.
inline std::vector<int> default_pyramid_resolutions() { return {8, 16, 32, 64, 128, 256, 512}; }
inline constexpr int kDefaultPyramidChannels = 12;
inline constexpr int kDefaultDepthLayers = 3;

/// Interpolation footprint of one point on one plane: 2 layers x 2 rows x 2 cols.
/// Offsets address channel 0; channel c adds c * channel_stride.
template <typename T>
struct PlaneFootprint {
  std::array<std::size_t, 8> offset{};
  std::array<T, 8> weight{};
};

template <typename T>
struct GridFootprint {
  std::array<PlaneFootprint<T>, kPlaneCount> planes;
  std::size_t channel_stride = 0;
};

namespace detail {

struct AxisCell {
  int lower;
  int upper;
  double frac;
};

/// Maps a coordinate in [-1, 1] onto `count` samples whose centers sit at -1 .. 1.
/// Out-of-range coordinates are clamped to the boundary.
inline AxisCell axis_cell(double u, int count) {
  if (count <= 1) return {0, 0, 0.0};
  const double clamped = std::clamp(u, -1.0, 1.0);
  const double f = (clamped + 1.0) * 0.5 * (count - 1);
  const int lower = std::min(static_cast<int>(std::floor(f)), count - 2);
  return {lower, lower + 1, f - lower};
}

}  // namespace detail

template <typename T>
GridFootprint<T> footprint(const TriGrid<T>& grid, const Point3<T>& p) {
  GridFootprint<T> fp;
  fp.channel_stride = grid.channel_stride();
  // (col axis, row axis, normal axis) per plane
  const std::array<std::array<double, 3>, kPlaneCount> coords = {{
      {double(p.x), double(p.y), double(p.z)},
      {double(p.x), double(p.z), double(p.y)},
      {double(p.y), double(p.z), double(p.x)},
  }};
  const int res = grid.resolution();
  for (int plane = 0; plane < kPlaneCount; ++plane) {
    const auto col = detail::axis_cell(coords[plane][0], res);
    const auto row = detail::axis_cell(coords[plane][1], res);
    const auto layer = detail::axis_cell(coords[plane][2], grid.depth_layers());
    auto& pf = fp.planes[plane];
    int k = 0;
    for (int dl = 0; dl < 2; ++dl) {
      const int l = dl ? layer.upper : layer.lower;
      const T wl = static_cast<T>(dl ? layer.frac : 1.0 - layer.frac);
      for (int dr = 0; dr < 2; ++dr) {
        const int r = dr ? row.upper : row.lower;
        const T wr = static_cast<T>(dr ? row.frac : 1.0 - row.frac);
        for (int dc = 0; dc < 2; ++dc, ++k) {
          const int c = dc ? col.upper : col.lower;
          const T wc = static_cast<T>(dc ? col.frac : 1.0 - col.frac);
          pf.offset[k] = grid.index(plane, l, 0, r, c);
          pf.weight[k] = wl * wr * wc;
        }
      }
    }
  }
  return fp;
}

namespace detail {

template <typename T>
void require_finite_point(const Point3<T>& p) {
  if (!isfinite(p)) throw InvalidInput("query point is not finite");
}

/// out[c] += sum over planes and corners of weight * value.
template <typename T>
void accumulate_query(const TriGrid<T>& grid, const GridFootprint<T>& fp, std::span<T> out) {
  const auto values = grid.values();
  const int channels = grid.channels();
  for (const auto& pf : fp.planes) {
    for (int k = 0; k < 8; ++k) {
      const T w = pf.weight[k];
      if (w == T(0)) continue;
      const T* base = values.data() + pf.offset[k];
      for (int c = 0; c < channels; ++c) out[c] += w * base[c * fp.channel_stride];
    }
  }
}

/// grad[entry] += weight * upstream[c] over the footprint.
template <typename T, typename A>
void scatter_query_grad(const GridFootprint<T>& fp, int channels, std::span<const T> upstream, std::span<A> grad) {
  for (const auto& pf : fp.planes) {
    for (int k = 0; k < 8; ++k) {
      const T w = pf.weight[k];
      if (w == T(0)) continue;
      A* base = grad.data() + pf.offset[k];
      for (int c = 0; c < channels; ++c) base[c * fp.channel_stride] += static_cast<A>(w * upstream[c]);
    }
  }
}

}  // namespace detail

/// Feature of `p` on a single tri-grid: bilinear within each plane, linear across
/// depth layers, summed over the three planes.
template <typename T>
std::vector<T> query_trigrid(const TriGrid<T>& grid, const Point3<T>& p) {
  detail::require_finite_point(p);
  std::vector<T> out(grid.channels(), T(0));
  detail::accumulate_query(grid, footprint(grid, p), std::span<T>(out));
  return out;
}

/// Channel-wise sum of `query_trigrid` over all pyramid levels, written into `out`.
template <typename T>
void query_pyramid_into(const PyramidTriGrid<T>& pyr, const Point3<T>& p, std::span<T> out) {
  detail::require(out.size() == static_cast<std::size_t>(pyr.channels()), "feature buffer has wrong length");
  std::fill(out.begin(), out.end(), T(0));
  for (const auto& level : pyr.levels()) detail::accumulate_query(level, footprint(level, p), out);
}

template <typename T>
std::vector<T> query_pyramid(const PyramidTriGrid<T>& pyr, const Point3<T>& p) {
  detail::require_finite_point(p);
  std::vector<T> out(pyr.channels(), T(0));
  query_pyramid_into(pyr, p, std::span<T>(out));
  return out;
}

/// Dense per-level gradient buffer shaped like a pyramid. `A` is the accumulator type.
template <typename A>
struct PyramidGradient {
  std::vector<std::vector<A>> levels;

  template <typename T>
  static PyramidGradient zeros_like(const PyramidTriGrid<T>& pyr) {
    PyramidGradient g;
    for (const auto& l : pyr.levels()) g.levels.emplace_back(l.size(), A(0));
    return g;
  }

  void set_zero() {
    for (auto& l : levels) std::fill(l.begin(), l.end(), A(0));
  }

  PyramidGradient& operator+=(const PyramidGradient& o) {
    detail::require(levels.size() == o.levels.size(), "gradient level count mismatch");
    for (std::size_t l = 0; l < levels.size(); ++l) {
      detail::require(levels[l].size() == o.levels[l].size(), "gradient level size mismatch");
      for (std::size_t i = 0; i < levels[l].size(); ++i) levels[l][i] += o.levels[l][i];
    }
    return *this;
  }

  void scale(A s) {
    for (auto& l : levels)
      for (auto& v : l) v *= s;
  }

  bool all_finite() const {
    for (const auto& l : levels)
      for (A v : l)
        if (!std::isfinite(v)) return false;
    return true;
  }

  A max_abs() const {
    A m = A(0);
    for (const auto& l : levels)
      for (A v : l) m = std::max(m, static_cast<A>(std::abs(v)));
    return m;
  }

  std::size_t nonzero_count() const {
    std::size_t n = 0;
    for (const auto& l : levels)
      for (A v : l) n += (v != A(0));
    return n;
  }

  template <typename U>
  PyramidGradient<U> cast() const {
    PyramidGradient<U> out;
    for (const auto& l : levels) out.levels.emplace_back(l.begin(), l.end());
    return out;
  }
};

/// Accumulates d<upstream, query_pyramid(pyr, p)>/d values into `grad`.
template <typename T, typename A>
void accumulate_query_pyramid_grad(const PyramidTriGrid<T>& pyr, const Point3<T>& p, std::span<const T> upstream,
                                   PyramidGradient<A>& grad) {
  detail::require(upstream.size() == static_cast<std::size_t>(pyr.channels()),
                  "upstream gradient length must equal channel count");
  detail::require(grad.levels.size() == pyr.level_count(), "gradient buffer does not match pyramid");
  for (std::size_t l = 0; l < pyr.level_count(); ++l) {
    const auto& level = pyr.level(l);
    detail::scatter_query_grad(footprint(level, p), level.channels(), upstream, std::span<A>(grad.levels[l]));
  }
}

template <typename T>
struct SparseGradient {
  struct Entry {
    std::size_t level;
    std::size_t index;
    T value;
  };
  std::vector<Entry> entries;
};

/// Adjoint of `query_pyramid`: the nonzero entries of d<upstream, query>/d values.
template <typename T>
SparseGradient<T> query_pyramid_grad(const PyramidTriGrid<T>& pyr, const Point3<T>& p, std::span<const T> upstream) {
  detail::require_finite_point(p);
  detail::require(upstream.size() == static_cast<std::size_t>(pyr.channels()),
                  "upstream gradient length must equal channel count");
  SparseGradient<T> out;
  const int channels = pyr.channels();
  for (std::size_t l = 0; l < pyr.level_count(); ++l) {
    const auto fp = footprint(pyr.level(l), p);
    for (const auto& pf : fp.planes)
      for (int k = 0; k < 8; ++k) {
        if (pf.weight[k] == T(0)) continue;
        for (int c = 0; c < channels; ++c) {
          const T v = pf.weight[k] * upstream[c];
          if (v != T(0)) out.entries.push_back({l, pf.offset[k] + c * fp.channel_stride, v});
        }
      }
  }
  return out;
}

}  // namespace pyrtri
