#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "pyrtri/core/bytes.hpp"
#include "pyrtri/io/files.hpp"
#include "pyrtri/render/renderer.hpp"
#include "pyrtri/synthesis/network.hpp"

namespace pyrtri {

// Weight files, little-endian:
//   "PTW1", u32 version (1), u32 kind (1 renderer, 2 synthesis network),
//   kind-specific u32 sizes, then arrays as u64 count + count float32 values.
// Renderer:  in_channels, hidden, color_features, latent_dim; f32 density_shift;
//            w1, b1, w2, b2, affine, affine_bias, linear, bias(3), background(3)
// Synthesis: level_count, resolutions..., channels, depth, latent_dim, backbone_channels;
//            const_input, then per level backbone, head2d, block3d convs
//            (u32 in, out, kernel; weight, bias, affine, affine_bias)

inline constexpr std::uint32_t kWeightFileVersion = 1;

namespace detail {

inline void put_array(ByteWriter& w, std::span<const float> v) {
  w.u64(v.size());
  w.reserve(v.size() * 4);
  for (float x : v) w.f32(x);
}

inline std::vector<float> get_array(ByteReader<IoError>& rd, std::size_t expected) {
  const auto n = rd.u64();
  if (n != expected) throw IoError("weight array has " + std::to_string(n) + " values, expected " + std::to_string(expected));
  rd.need(n * 4);
  std::vector<float> v(n);
  for (auto& x : v) {
    x = rd.f32();
    if (!std::isfinite(x)) throw IoError("weight file contains non-finite values");
  }
  return v;
}

inline std::uint32_t checked_size(ByteReader<IoError>& rd, std::uint32_t max) {
  const auto v = rd.u32();
  if (v > max) throw IoError("implausible size in weight file");
  return v;
}

inline ByteReader<IoError> open_weights(std::string_view bytes, std::uint32_t kind) {
  ByteReader<IoError> rd(bytes);
  if (rd.bytes(4) != "PTW1") throw IoError("not a weight file (bad magic)");
  if (rd.u32() != kWeightFileVersion) throw IoError("unsupported weight file version");
  if (rd.u32() != kind) throw IoError("weight file holds a different model kind");
  return rd;
}

inline void put_conv(ByteWriter& w, const ModulatedConv<float>& c) {
  w.u32(c.in);
  w.u32(c.out);
  w.u32(c.kernel);
  put_array(w, c.weight);
  put_array(w, c.bias);
  put_array(w, c.affine);
  put_array(w, c.affine_bias);
}

inline ModulatedConv<float> get_conv(ByteReader<IoError>& rd, int latent_dim) {
  const int in = checked_size(rd, 1 << 16), out = checked_size(rd, 1 << 16), k = checked_size(rd, 15);
  auto c = ModulatedConv<float>::make(in, out, k, latent_dim);
  c.weight = get_array(rd, c.weight.size());
  c.bias = get_array(rd, c.bias.size());
  c.affine = get_array(rd, c.affine.size());
  c.affine_bias = get_array(rd, c.affine_bias.size());
  return c;
}

}  // namespace detail

inline std::string encode_renderer(const NeuralRenderer<float>& r) {
  r.validate();
  ByteWriter w;
  w.bytes("PTW1");
  w.u32(kWeightFileVersion);
  w.u32(1);
  w.u32(r.decoder.in_channels);
  w.u32(r.decoder.hidden);
  w.u32(r.decoder.color_features);
  w.u32(r.to_rgb.latent_dim);
  w.f32(r.decoder.density_shift);
  for (const auto* v : {&r.decoder.w1, &r.decoder.b1, &r.decoder.w2, &r.decoder.b2, &r.to_rgb.affine,
                        &r.to_rgb.affine_bias, &r.to_rgb.linear})
    detail::put_array(w, *v);
  detail::put_array(w, r.to_rgb.bias);
  detail::put_array(w, r.to_rgb.background);
  return w.take();
}

inline NeuralRenderer<float> decode_renderer(std::string_view bytes) {
  auto rd = detail::open_weights(bytes, 1);
  const int in = detail::checked_size(rd, 4096), hidden = detail::checked_size(rd, 4096);
  const int k = detail::checked_size(rd, 4096), latent = detail::checked_size(rd, 1 << 16);
  if (in < 1 || hidden < 1 || k < 1) throw IoError("renderer sizes must be positive");
  NeuralRenderer<float> r{DecoderParams<float>::zeros(in, hidden, k), ToRgbParams<float>::identity_modulation(latent, k)};
  r.decoder.density_shift = rd.f32();
  for (auto* v : {&r.decoder.w1, &r.decoder.b1, &r.decoder.w2, &r.decoder.b2, &r.to_rgb.affine, &r.to_rgb.affine_bias,
                  &r.to_rgb.linear})
    *v = detail::get_array(rd, v->size());
  const auto bias = detail::get_array(rd, 3), bg = detail::get_array(rd, 3);
  std::copy(bias.begin(), bias.end(), r.to_rgb.bias.begin());
  std::copy(bg.begin(), bg.end(), r.to_rgb.background.begin());
  if (!rd.done()) throw IoError("trailing bytes in weight file");
  if (!std::isfinite(r.decoder.density_shift)) throw IoError("weight file contains non-finite values");
  return r;
}

inline std::string encode_network(const SynthesisNetwork<float>& net) {
  const auto& cfg = net.config;
  cfg.validate();
  ByteWriter w;
  w.bytes("PTW1");
  w.u32(kWeightFileVersion);
  w.u32(2);
  w.u32(static_cast<std::uint32_t>(cfg.resolutions.size()));
  for (int r : cfg.resolutions) w.u32(r);
  w.u32(cfg.channels);
  w.u32(cfg.depth_layers);
  w.u32(cfg.latent_dim);
  w.u32(cfg.backbone_channels);
  detail::put_array(w, net.const_input.data);
  for (std::size_t l = 0; l < cfg.resolutions.size(); ++l) {
    detail::put_conv(w, net.backbone[l]);
    detail::put_conv(w, net.head2d[l]);
    detail::put_conv(w, net.block3d[l]);
  }
  return w.take();
}

inline SynthesisNetwork<float> decode_network(std::string_view bytes) {
  auto rd = detail::open_weights(bytes, 2);
  SynthesisConfig cfg;
  cfg.resolutions.resize(detail::checked_size(rd, 16));
  for (auto& r : cfg.resolutions) r = detail::checked_size(rd, 8192);
  cfg.channels = detail::checked_size(rd, 4096);
  cfg.depth_layers = detail::checked_size(rd, 64);
  cfg.latent_dim = detail::checked_size(rd, 1 << 16);
  cfg.backbone_channels = detail::checked_size(rd, 4096);
  SynthesisNetwork<float> net;
  try {
    net = SynthesisNetwork<float>::zeros(cfg);
  } catch (const InvalidInput& e) {
    throw IoError(std::string("invalid network configuration in weight file: ") + e.what());
  }
  net.const_input.data = detail::get_array(rd, net.const_input.data.size());
  for (std::size_t l = 0; l < cfg.resolutions.size(); ++l) {
    for (auto* group : {&net.backbone, &net.head2d, &net.block3d}) {
      auto c = detail::get_conv(rd, cfg.latent_dim);
      const auto& ref = (*group)[l];
      if (c.in != ref.in || c.out != ref.out || c.kernel != ref.kernel) throw IoError("layer shape mismatch in weight file");
      (*group)[l] = std::move(c);
    }
  }
  if (!rd.done()) throw IoError("trailing bytes in weight file");
  return net;
}

inline void save_renderer(const std::filesystem::path& p, const NeuralRenderer<float>& r) { atomic_write(p, encode_renderer(r)); }
inline NeuralRenderer<float> load_renderer(const std::filesystem::path& p) { return decode_renderer(read_file(p)); }
inline void save_network(const std::filesystem::path& p, const SynthesisNetwork<float>& n) { atomic_write(p, encode_network(n)); }
inline SynthesisNetwork<float> load_network(const std::filesystem::path& p) { return decode_network(read_file(p)); }

}  // namespace pyrtri
