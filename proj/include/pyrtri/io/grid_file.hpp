#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "pyrtri/core/bytes.hpp"
#include "pyrtri/core/trigrid.hpp"
#include "pyrtri/io/files.hpp"

namespace pyrtri {

// Grid file, all little-endian:
//   "PTG1", u32 version (1), u32 level_count,
//   per level: u32 resolution, u32 depth, u32 channels,
//   per level: resolution^2 * depth * channels * 3 float32 values in storage order
//   (plane, depth layer, channel, row, column).

inline constexpr std::uint32_t kGridFileVersion = 1;

inline std::string encode_grid(const PyramidTriGrid<float>& pyr) {
  pyr.validate();
  ByteWriter w;
  w.bytes("PTG1");
  w.u32(kGridFileVersion);
  w.u32(static_cast<std::uint32_t>(pyr.level_count()));
  for (const auto& l : pyr.levels()) {
    w.u32(static_cast<std::uint32_t>(l.resolution()));
    w.u32(static_cast<std::uint32_t>(l.depth_layers()));
    w.u32(static_cast<std::uint32_t>(l.channels()));
  }
  for (const auto& l : pyr.levels()) {
    w.reserve(l.size() * 4);
    for (float v : l.values()) w.f32(v);
  }
  return w.take();
}

inline PyramidTriGrid<float> decode_grid(std::string_view bytes) {
  ByteReader<IoError> rd(bytes);
  if (rd.bytes(4) != "PTG1") throw IoError("not a grid file (bad magic)");
  const auto version = rd.u32();
  if (version != kGridFileVersion) throw IoError("unsupported grid file version " + std::to_string(version));
  const auto count = rd.u32();
  if (count == 0 || count > 32) throw IoError("implausible level count " + std::to_string(count));
  std::vector<std::array<std::uint32_t, 3>> shapes(count);
  for (auto& s : shapes) {
    s = {rd.u32(), rd.u32(), rd.u32()};
    if (s[0] < 2 || s[0] > 8192 || s[1] < 1 || s[1] > 64 || s[2] < 1 || s[2] > 4096)
      throw IoError("implausible level shape in grid file");
  }
  std::vector<TriGrid<float>> levels;
  for (const auto& s : shapes) {
    const std::size_t n = std::size_t(3) * s[0] * s[0] * s[1] * s[2];
    rd.need(n * 4);
    TriGrid<float> g(static_cast<int>(s[0]), static_cast<int>(s[2]), static_cast<int>(s[1]));
    auto values = g.values();
    for (std::size_t i = 0; i < n; ++i) {
      values[i] = rd.f32();
      if (!std::isfinite(values[i])) throw IoError("grid file contains non-finite values");
    }
    levels.push_back(std::move(g));
  }
  if (!rd.done()) throw IoError("trailing bytes in grid file");
  try {
    return PyramidTriGrid<float>(std::move(levels));
  } catch (const InvalidInput& e) {
    throw IoError(std::string("inconsistent grid file: ") + e.what());
  }
}

inline void save_grid(const std::filesystem::path& path, const PyramidTriGrid<float>& pyr) {
  atomic_write(path, encode_grid(pyr));
}

inline PyramidTriGrid<float> load_grid(const std::filesystem::path& path) { return decode_grid(read_file(path)); }

}  // namespace pyrtri
