#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "pyrtri/core/bytes.hpp"
#include "pyrtri/core/image.hpp"
#include "pyrtri/guidance/provider.hpp"

namespace pyrtri::wire {

// Protocol version 1. All integers and floats little-endian.
//
// tensor:   8-byte magic "PGIM\0\0\0\1", u32 height, u32 width, u32 channels,
//           height*width*channels float32 values, row-major, channels innermost
// request:  f64 timestep, f64 noise_level, u32 prompt byte length, prompt UTF-8 bytes,
//           u64 seed, u32 tensor count, tensors
// response: u32 tensor count, tensors
//
// /predict_noise request tensors: z_t, eps.  response: eps-hat.
// /denoise       request tensors: image.     response: refined image.
// /health        GET, plain-text body "1".

inline constexpr std::string_view kProtocolVersion = "1";
inline constexpr std::array<char, 8> kTensorMagic{'P', 'G', 'I', 'M', '\0', '\0', '\0', '\1'};
inline constexpr std::uint32_t kMaxDimension = 1u << 16;

struct Request {
  double timestep = 0.0;
  double noise_level = 0.0;
  std::string prompt;
  std::uint64_t seed = 0;
  std::vector<Image<float>> tensors;

  bool operator==(const Request&) const = default;
};

inline void write_tensor(ByteWriter& w, const Image<float>& img) {
  w.bytes(std::string_view(kTensorMagic.data(), kTensorMagic.size()));
  w.u32(static_cast<std::uint32_t>(img.height));
  w.u32(static_cast<std::uint32_t>(img.width));
  w.u32(static_cast<std::uint32_t>(img.channels));
  w.reserve(img.data.size() * 4);
  for (float v : img.data) w.f32(v);
}

/// Reads one tensor block; `Err` is the exception type for malformed input.
template <typename Err>
Image<float> read_tensor(ByteReader<Err>& rd) {
  const auto magic = rd.bytes(kTensorMagic.size());
  if (std::memcmp(magic.data(), kTensorMagic.data(), kTensorMagic.size()) != 0) throw Err("bad tensor magic");
  const std::uint32_t h = rd.u32(), w = rd.u32(), c = rd.u32();
  if (h > kMaxDimension || w > kMaxDimension || c > kMaxDimension) throw Err("tensor dimension too large");
  const std::size_t count = std::size_t(h) * w * c;
  rd.need(count * 4);
  Image<float> img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  for (auto& v : img.data) v = rd.f32();
  return img;
}

using Reader = ByteReader<TransportError>;

inline std::string encode_request(const Request& r) {
  ByteWriter w;
  w.f64(r.timestep);
  w.f64(r.noise_level);
  w.u32(static_cast<std::uint32_t>(r.prompt.size()));
  w.bytes(r.prompt);
  w.u64(r.seed);
  w.u32(static_cast<std::uint32_t>(r.tensors.size()));
  for (const auto& t : r.tensors) write_tensor(w, t);
  return w.take();
}

inline Request decode_request(std::string_view body) {
  Reader rd(body);
  Request r;
  r.timestep = rd.f64();
  r.noise_level = rd.f64();
  r.prompt = std::string(rd.bytes(rd.u32()));
  r.seed = rd.u64();
  const std::uint32_t n = rd.u32();
  for (std::uint32_t i = 0; i < n; ++i) r.tensors.push_back(read_tensor(rd));
  if (!rd.done()) throw TransportError("trailing bytes after request");
  return r;
}

inline std::string encode_response(const std::vector<Image<float>>& tensors) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) write_tensor(w, t);
  return w.take();
}

inline std::vector<Image<float>> decode_response(std::string_view body) {
  Reader rd(body);
  std::vector<Image<float>> out;
  const std::uint32_t n = rd.u32();
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(read_tensor(rd));
  if (!rd.done()) throw TransportError("trailing bytes after response");
  return out;
}

}  // namespace pyrtri::wire
