#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pyrtri/core/error.hpp"
#include "pyrtri/core/parallel.hpp"
#include "pyrtri/core/trigrid.hpp"
#include "pyrtri/core/vec.hpp"
#include "pyrtri/render/decoder.hpp"

namespace pyrtri {

struct Mesh {
  std::vector<Vec3<double>> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
};

/// Samples on an n x n x n lattice spanning [-1, 1]^3, x fastest.
struct ScalarLattice {
  int n = 0;
  std::vector<double> values;

  double at(int x, int y, int z) const { return values[(static_cast<std::size_t>(z) * n + y) * n + x]; }
  double coord(int i) const { return -1.0 + 2.0 * i / (n - 1); }
  double spacing() const { return 2.0 / (n - 1); }
};

namespace detail {

// Corner c of the unit cube sits at (c & 1, (c >> 1) & 1, (c >> 2) & 1).
inline constexpr std::array<std::array<int, 2>, 12> kCubeEdges{{{0, 1}, {2, 3}, {4, 5}, {6, 7},    // along x
                                                                {0, 2}, {1, 3}, {4, 6}, {5, 7},    // along y
                                                                {0, 4}, {1, 5}, {2, 6}, {3, 7}}};  // along z

inline int cube_edge(int a, int b) {
  for (int e = 0; e < 12; ++e)
    if ((kCubeEdges[e][0] == a && kCubeEdges[e][1] == b) || (kCubeEdges[e][0] == b && kCubeEdges[e][1] == a)) return e;
  return -1;
}

/// Surface pieces for each of the 256 inside/outside corner patterns.
/// Built from face rules: on every face each run of inside corners is cut off by one segment,
/// the segments chain into closed loops of cube edges, and each loop is fanned from a vertex
/// whose diagonals stay off the cube faces. Neighboring cubes see a shared face identically,
/// so the surface closes across cells. Every one of the 256 cases admits such a fan.
class CaseTable {
 public:
  struct Case {
    std::vector<std::vector<int>> loops;
    std::vector<std::array<int, 3>> triangles;
  };

  CaseTable() {
    const auto faces = oriented_faces();
    for (int mask = 0; mask < 256; ++mask) {
      auto inside = [&](int c) { return (mask >> c) & 1; };
      std::array<int, 12> next;
      next.fill(-1);
      for (const auto& f : faces) {
        // edge k joins f[k] -> f[k+1]; an exit leaves an inside corner, an enter arrives at one
        for (int k = 0; k < 4; ++k) {
          const int a = f[k], b = f[(k + 1) % 4];
          if (!(inside(a) && !inside(b))) continue;
          int j = (k + 3) % 4;
          while (!(!inside(f[j]) && inside(f[(j + 1) % 4]))) j = (j + 3) % 4;
          next[cube_edge(a, b)] = cube_edge(f[j], f[(j + 1) % 4]);
        }
      }
      auto& c = cases_[mask];
      std::array<bool, 12> used{};
      for (int start = 0; start < 12; ++start) {
        if (next[start] < 0 || used[start]) continue;
        std::vector<int> loop;
        for (int e = start; !used[e]; e = next[e]) {
          used[e] = true;
          loop.push_back(e);
        }
        triangulate(loop, faces, c.triangles);
        c.loops.push_back(std::move(loop));
      }
    }
  }

  const Case& operator[](int mask) const { return cases_[mask]; }

 private:
  static bool share_face(int e1, int e2, const std::vector<std::array<int, 4>>& faces) {
    for (const auto& f : faces) {
      auto on = [&](int e) {
        int hits = 0;
        for (int c : f) hits += (c == kCubeEdges[e][0]) + (c == kCubeEdges[e][1]);
        return hits == 2;
      };
      if (on(e1) && on(e2)) return true;
    }
    return false;
  }

  // Wound so the normal points from inside (value > iso) to outside.
  static void triangulate(const std::vector<int>& loop, const std::vector<std::array<int, 4>>& faces,
                          std::vector<std::array<int, 3>>& out) {
    const int m = static_cast<int>(loop.size());
    for (int s = 0; s < m; ++s) {
      bool ok = true;
      for (int j = 2; j + 1 < m && ok; ++j) ok = !share_face(loop[s], loop[(s + j) % m], faces);
      if (!ok) continue;
      for (int j = 1; j + 1 < m; ++j) out.push_back({loop[s], loop[(s + j + 1) % m], loop[(s + j) % m]});
      return;
    }
    throw std::logic_error("marching cubes loop without a face-free fan");
  }

  // Each face's corners in counter-clockwise order seen from outside the cube.
  static std::vector<std::array<int, 4>> oriented_faces() {
    std::vector<std::array<int, 4>> faces;
    for (int axis = 0; axis < 3; ++axis) {
      for (int side = 0; side < 2; ++side) {
        const int u = (axis + 1) % 3, v = (axis + 2) % 3;  // (u, v, axis) is right-handed
        std::array<int, 4> f;
        const int order[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
        for (int k = 0; k < 4; ++k) f[k] = (side << axis) | (order[k][0] << u) | (order[k][1] << v);
        if (side == 0) std::swap(f[1], f[3]);  // outward normal is -axis
        faces.push_back(f);
      }
    }
    return faces;
  }

  std::array<Case, 256> cases_;
};

inline const CaseTable& case_table() {
  static const CaseTable table;
  return table;
}

}  // namespace detail

/// Isosurface {value = iso} with linear edge interpolation; "inside" is value > iso.
/// Vertices are shared between cells, so closed surfaces come out watertight.
/// Triangles are wound counter-clockwise seen from the low-value side.
inline Mesh marching_cubes(const ScalarLattice& lat, double iso) {
  detail::require(lat.n >= 2 && lat.values.size() == static_cast<std::size_t>(lat.n) * lat.n * lat.n,
                  "lattice size mismatch");
  for (double v : lat.values) detail::require(std::isfinite(v), "lattice values must be finite");
  const auto& table = detail::case_table();
  const int n = lat.n;
  Mesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  auto vertex = [&](int x, int y, int z, int e) {
    const auto [a, b] = detail::kCubeEdges[e];
    const int ax = x + (a & 1), ay = y + ((a >> 1) & 1), az = z + ((a >> 2) & 1);
    const int bx = x + (b & 1), by = y + ((b >> 1) & 1), bz = z + ((b >> 2) & 1);
    const int axis = e / 4;
    const std::uint64_t key = ((static_cast<std::uint64_t>(az) * n + ay) * n + ax) * 3 + axis;
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double va = lat.at(ax, ay, az), vb = lat.at(bx, by, bz);
    const double t = (iso - va) / (vb - va);
    const Vec3<double> pa{lat.coord(ax), lat.coord(ay), lat.coord(az)};
    const Vec3<double> pb{lat.coord(bx), lat.coord(by), lat.coord(bz)};
    const auto idx = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(pa + (pb - pa) * t);
    edge_vertex.emplace(key, idx);
    return idx;
  };
  const double min_area2 = 1e-24 * std::pow(lat.spacing(), 4);
  for (int z = 0; z + 1 < n; ++z)
    for (int y = 0; y + 1 < n; ++y)
      for (int x = 0; x + 1 < n; ++x) {
        int mask = 0;
        for (int c = 0; c < 8; ++c)
          if (lat.at(x + (c & 1), y + ((c >> 1) & 1), z + ((c >> 2) & 1)) > iso) mask |= 1 << c;
        const auto& cs = table[mask];
        std::array<std::uint32_t, 12> ids{};
        for (const auto& loop : cs.loops)
          for (int e : loop) ids[e] = vertex(x, y, z, e);
        for (const auto& tri : cs.triangles) {
          const std::array<std::uint32_t, 3> t{ids[tri[0]], ids[tri[1]], ids[tri[2]]};
          const auto& p0 = mesh.vertices[t[0]];
          const auto cr = cross(mesh.vertices[t[1]] - p0, mesh.vertices[t[2]] - p0);
          if (dot(cr, cr) <= min_area2) continue;  // corner exactly on the isosurface
          mesh.triangles.push_back(t);
        }
      }
  return mesh;
}

/// Lattice of an arbitrary density function.
inline ScalarLattice sample_lattice(const std::function<double(const Vec3<double>&)>& density, int n,
                                    Execution exec = {}) {
  detail::require(n >= 2, "lattice resolution must be at least 2");
  ScalarLattice lat{n, std::vector<double>(static_cast<std::size_t>(n) * n * n)};
  parallel_for(static_cast<std::size_t>(n) * n, exec, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t zy = begin; zy < end; ++zy) {
      const int z = static_cast<int>(zy / n), y = static_cast<int>(zy % n);
      for (int x = 0; x < n; ++x)
        lat.values[(static_cast<std::size_t>(z) * n + y) * n + x] = density({lat.coord(x), lat.coord(y), lat.coord(z)});
    }
  });
  return lat;
}

/// Decoder density of the pyramid at every lattice point.
template <typename T>
ScalarLattice density_lattice(const PyramidTriGrid<T>& pyr, const DecoderParams<T>& decoder, int n,
                              Execution exec = {}) {
  pyr.validate();
  decoder.validate();
  detail::require(pyr.channels() == decoder.in_channels, "decoder input width must equal pyramid channels");
  return sample_lattice(
      [&](const Vec3<double>& p) {
        std::vector<T> features(pyr.channels()), color(decoder.color_features);
        query_pyramid_into(pyr, p.template cast<T>(), std::span<T>(features));
        DecoderActivations<T> act(decoder);
        return double(decode(decoder, std::span<const T>(features), std::span<T>(color), act));
      },
      n, exec);
}

struct MeshReport {
  Mesh mesh;
  double min_density = 0.0;
  double max_density = 0.0;
  bool empty = true;
};

/// Marching Cubes on the decoded density over [-1, 1]^3. An iso-level outside the sampled
/// density range gives an empty (valid) mesh.
template <typename T>
MeshReport extract_mesh(const PyramidTriGrid<T>& pyr, const DecoderParams<T>& decoder, int resolution, double iso,
                        Execution exec = {}) {
  detail::require(resolution >= 8, "mesh resolution must be at least 8");
  const auto lat = density_lattice(pyr, decoder, resolution, exec);
  MeshReport rep;
  rep.min_density = *std::min_element(lat.values.begin(), lat.values.end());
  rep.max_density = *std::max_element(lat.values.begin(), lat.values.end());
  rep.mesh = marching_cubes(lat, iso);
  rep.empty = rep.mesh.empty();
  return rep;
}

/// ASCII OBJ: "v x y z" lines then 1-based "f a b c" lines.
inline std::string to_obj(const Mesh& mesh) {
  std::ostringstream out;
  out.precision(9);
  for (const auto& v : mesh.vertices) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  return out.str();
}

/// Every undirected edge used by exactly two triangles, in opposite directions.
inline bool is_watertight(const Mesh& mesh) {
  std::unordered_map<std::uint64_t, int> directed;
  for (const auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k) ++directed[(std::uint64_t(t[k]) << 32) | t[(k + 1) % 3]];
  for (const auto& [key, count] : directed) {
    if (count != 1) return false;
    const std::uint64_t rev = (key << 32) | (key >> 32);
    auto it = directed.find(rev);
    if (it == directed.end() || it->second != 1) return false;
  }
  return true;
}

}  // namespace pyrtri
