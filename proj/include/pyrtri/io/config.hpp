#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pyrtri/core/error.hpp"
#include "pyrtri/diff/fit.hpp"
#include "pyrtri/guidance/refine.hpp"
#include "pyrtri/guidance/sds.hpp"
#include "pyrtri/io/files.hpp"
#include "pyrtri/render/renderer.hpp"
#include "pyrtri/synthesis/inversion.hpp"
#include "pyrtri/synthesis/network.hpp"

namespace pyrtri {

/// Everything the pipeline commands read. Defaults are the desk-scale toy configuration.
struct PipelineConfig {
  // [run]
  std::uint64_t seed = 0;
  bool deterministic = false;
  int threads = 1;
  std::string out = "out";
  std::string prompt;
  // [render]
  CameraPose camera{};
  RenderOptions render{};
  // [renderer]
  int hidden = 64;
  int color_features = 8;
  double density_bias = 7.0;  // added to the decoder's density output bias of a fresh renderer
  std::string renderer_weights;
  // [pyramid]
  std::vector<int> resolutions{8, 16, 32, 64};
  int channels = 12;
  int depth_layers = 3;
  // [synthesis]
  int latent_dim = 64;
  int backbone_channels = 32;
  std::string network_weights;
  // [inversion]
  bool invert = true;
  InversionConfig inversion{};
  std::string reference;
  // [sds]
  SdsConfig sds{};
  // [refine]
  RefineConfig refine{};
  bool skip_refine = false;
  // [fit]
  FitConfig fit{};
  int fit_views = 8;
  // [provider]
  std::string provider = "oracle";  // oracle | remote:URL
  double oracle_lambda = 1.0;
  int timeout_ms = 30000;
  // [mesh]
  int mesh_resolution = 64;
  double iso = 1.0;
  // [spectrum]
  double cutoff = 0.25;
  // [gradcheck]
  int gradcheck_scenes = 3;
  double gradcheck_threshold = 1e-3;
  double gradcheck_step = 1e-3;

  PipelineConfig() {
    camera.image_size = 32;
    render.samples_per_ray = 48;
    sds.steps = 200;
    refine.steps = 50;
    inversion.iterations = 50;
    fit.steps = 2000;
  }

  SynthesisConfig synthesis() const {
    SynthesisConfig s;
    s.resolutions = resolutions;
    s.channels = channels;
    s.depth_layers = depth_layers;
    s.latent_dim = latent_dim;
    s.backbone_channels = backbone_channels;
    return s;
  }

  Execution exec() const { return {deterministic ? 1 : threads}; }

  /// Pushes the shared settings (render, camera, seeds, threads) into the stage configs.
  void propagate() {
    render.exec = exec();
    sds.render = render;
    sds.camera = camera;
    sds.seed = mix_seed(seed, 0x5d5);
    sds.prompt = prompt;
    refine.prompt = prompt;
    refine.render = render;
    refine.render.jitter = false;
    refine.camera = camera;
    refine.seed = mix_seed(seed, 0x7ef);
    inversion.render = render;
    inversion.render.jitter = false;
    inversion.render_seed = mix_seed(seed, 0x1e1);
    fit.render = render;
    fit.seed = mix_seed(seed, 0xf17);
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline long long parse_int(const std::string& v, long long lo, long long hi) {
  long long x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) throw InvalidInput("expected an integer, got '" + v + "'");
  if (x < lo || x > hi)
    throw InvalidInput("value " + v + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return x;
}

inline std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) throw InvalidInput("expected an unsigned integer, got '" + v + "'");
  return x;
}

inline double parse_real(const std::string& v, double lo, double hi, bool open_lo = false) {
  double x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(x))
    throw InvalidInput("expected a finite number, got '" + v + "'");
  if (x < lo || x > hi || (open_lo && x == lo)) {
    std::ostringstream m;
    m << "value " << v << " outside " << (open_lo ? "(" : "[") << lo << ", " << hi << "]";
    throw InvalidInput(m.str());
  }
  return x;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidInput("expected true or false, got '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& v, long long lo, long long hi) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(trim(item), lo, hi)));
  if (out.empty()) throw InvalidInput("expected a comma-separated list");
  return out;
}

}  // namespace detail

/// Line-oriented "key = value" text with [section] headers; '#' and ';' start comments.
/// Unknown sections or keys, repeated keys, malformed lines and out-of-range values are
/// rejected with the offending line number.
inline PipelineConfig parse_config(std::string_view text) {
  using namespace detail;
  PipelineConfig c;
  std::map<std::string, std::function<void(const std::string&)>> keys{
      {"run.seed", [&](const std::string& v) { c.seed = parse_u64(v); }},
      {"run.deterministic", [&](const std::string& v) { c.deterministic = parse_bool(v); }},
      {"run.threads", [&](const std::string& v) { c.threads = int(parse_int(v, 1, 1024)); }},
      {"run.out", [&](const std::string& v) { c.out = v; }},
      {"run.prompt", [&](const std::string& v) { c.prompt = v; }},
      {"render.image_size", [&](const std::string& v) { c.camera.image_size = int(parse_int(v, 1, 4096)); }},
      {"render.samples_per_ray", [&](const std::string& v) { c.render.samples_per_ray = int(parse_int(v, 2, 4096)); }},
      {"render.fov", [&](const std::string& v) { c.camera.fov_y_deg = parse_real(v, 0, 179, true); }},
      {"render.radius", [&](const std::string& v) { c.camera.radius = parse_real(v, 0, 1e6, true); }},
      {"render.bound_margin", [&](const std::string& v) { c.render.bound_margin = parse_real(v, 0, 1e6, true); }},
      {"render.jitter", [&](const std::string& v) { c.render.jitter = parse_bool(v); }},
      {"renderer.hidden", [&](const std::string& v) { c.hidden = int(parse_int(v, 1, 4096)); }},
      {"renderer.color_features", [&](const std::string& v) { c.color_features = int(parse_int(v, 1, 4096)); }},
      {"renderer.density_bias", [&](const std::string& v) { c.density_bias = parse_real(v, -100, 100); }},
      {"renderer.weights", [&](const std::string& v) { c.renderer_weights = v; }},
      {"pyramid.resolutions", [&](const std::string& v) { c.resolutions = parse_int_list(v, 2, 8192); }},
      {"pyramid.depth_layers", [&](const std::string& v) { c.depth_layers = int(parse_int(v, 1, 1024)); }},
      {"pyramid.channels", [&](const std::string& v) { c.channels = int(parse_int(v, 1, 4096)); }},
      {"synthesis.latent_dim", [&](const std::string& v) { c.latent_dim = int(parse_int(v, 1, 1 << 16)); }},
      {"synthesis.backbone_channels", [&](const std::string& v) { c.backbone_channels = int(parse_int(v, 1, 4096)); }},
      {"synthesis.weights", [&](const std::string& v) { c.network_weights = v; }},
      {"inversion.enabled", [&](const std::string& v) { c.invert = parse_bool(v); }},
      {"inversion.iterations", [&](const std::string& v) { c.inversion.iterations = int(parse_int(v, 0, 1 << 30)); }},
      {"inversion.learning_rate", [&](const std::string& v) { c.inversion.learning_rate = parse_real(v, 0, 1e3, true); }},
      {"inversion.latent_reg", [&](const std::string& v) { c.inversion.latent_reg = parse_real(v, 0, 1e12); }},
      {"inversion.reference", [&](const std::string& v) { c.reference = v; }},
      {"sds.steps", [&](const std::string& v) { c.sds.steps = int(parse_int(v, 0, 1 << 30)); }},
      {"sds.learning_rate", [&](const std::string& v) { c.sds.learning_rate = parse_real(v, 0, 1e3, true); }},
      {"sds.t_min", [&](const std::string& v) { c.sds.t_min = parse_real(v, 0, 1); }},
      {"sds.t_max", [&](const std::string& v) { c.sds.t_max = parse_real(v, 0, 1); }},
      {"sds.weight", [&](const std::string& v) { c.sds.weight = parse_real(v, 0, 1e12); }},
      {"sds.weighting",
       [&](const std::string& v) {
         if (v == "constant") c.sds.weighting = SdsWeighting::Constant;
         else if (v == "variance") c.sds.weighting = SdsWeighting::Variance;
         else throw InvalidInput("weighting must be constant or variance");
       }},
      {"sds.max_retries", [&](const std::string& v) { c.sds.max_retries = int(parse_int(v, 0, 1000)); }},
      {"refine.steps", [&](const std::string& v) { c.refine.steps = int(parse_int(v, 0, 1 << 30)); }},
      {"refine.noise_level", [&](const std::string& v) { c.refine.noise_level = parse_real(v, 0, 1); }},
      {"refine.views_per_step", [&](const std::string& v) { c.refine.views_per_step = int(parse_int(v, 1, 1 << 16)); }},
      {"refine.learning_rate", [&](const std::string& v) { c.refine.learning_rate = parse_real(v, 0, 1e3, true); }},
      {"refine.min_views", [&](const std::string& v) { c.refine.min_views = int(parse_int(v, 1, 1 << 16)); }},
      {"refine.skip", [&](const std::string& v) { c.skip_refine = parse_bool(v); }},
      {"fit.steps", [&](const std::string& v) { c.fit.steps = int(parse_int(v, 0, 1 << 30)); }},
      {"fit.rays_per_step", [&](const std::string& v) { c.fit.rays_per_step = int(parse_int(v, 1, 1 << 24)); }},
      {"fit.learning_rate", [&](const std::string& v) { c.fit.learning_rate = parse_real(v, 0, 1e3, true); }},
      {"fit.views", [&](const std::string& v) { c.fit_views = int(parse_int(v, 2, 4096)); }},
      {"provider.kind", [&](const std::string& v) { c.provider = v; }},
      {"provider.lambda", [&](const std::string& v) { c.oracle_lambda = parse_real(v, 0, 1e6, true); }},
      {"provider.timeout_ms", [&](const std::string& v) { c.timeout_ms = int(parse_int(v, 1, 1 << 30)); }},
      {"mesh.resolution", [&](const std::string& v) { c.mesh_resolution = int(parse_int(v, 8, 2048)); }},
      {"mesh.iso", [&](const std::string& v) { c.iso = parse_real(v, -1e12, 1e12); }},
      {"spectrum.cutoff", [&](const std::string& v) { c.cutoff = parse_real(v, 0, 0.5, true); }},
      {"gradcheck.scenes", [&](const std::string& v) { c.gradcheck_scenes = int(parse_int(v, 1, 1000)); }},
      {"gradcheck.threshold", [&](const std::string& v) { c.gradcheck_threshold = parse_real(v, 0, 1, true); }},
      {"gradcheck.step", [&](const std::string& v) { c.gradcheck_step = parse_real(v, 0, 1, true); }},
  };
  const std::map<std::string, int> sections{{"run", 0},    {"render", 0}, {"renderer", 0}, {"pyramid", 0},
                                            {"synthesis", 0}, {"inversion", 0}, {"sds", 0}, {"refine", 0},
                                            {"fit", 0},    {"provider", 0}, {"mesh", 0},    {"spectrum", 0},
                                            {"gradcheck", 0}};
  std::map<std::string, int> seen;  // key -> line
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("malformed section header", line_no);
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!sections.count(section)) throw ConfigError("unknown section [" + section + "]", line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value", line_no);
    if (section.empty()) throw ConfigError("key outside of any section", line_no);
    const std::string key = section + "." + trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError("unknown key '" + key + "'", line_no);
    if (seen.count(key)) throw ConfigError("repeated key '" + key + "'", line_no);
    seen[key] = line_no;
    try {
      it->second(value);
    } catch (const InvalidInput& e) {
      throw ConfigError(key + ": " + e.what(), line_no);
    }
  }
  // cross-key invariants, reported at the last line of the section involved
  auto last_line = [&](const std::string& sec) {
    int l = 0;
    for (const auto& [k, n] : seen)
      if (k.rfind(sec + ".", 0) == 0) l = std::max(l, n);
    return l;
  };
  auto check = [&](const std::string& sec, auto&& fn) {
    try {
      fn();
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what(), last_line(sec));
    }
  };
  c.propagate();
  check("render", [&] { c.camera.validate(); c.render.validate(); });
  check("pyramid", [&] { c.synthesis().validate(); });
  check("synthesis", [&] { c.synthesis().validate(); });
  check("sds", [&] { c.sds.validate(); });
  check("refine", [&] { c.refine.validate(); });
  check("fit", [&] { c.fit.validate(); });
  check("provider", [&] {
    if (c.provider != "oracle" && c.provider.rfind("remote:", 0) != 0)
      throw InvalidInput("provider must be oracle or remote:URL");
  });
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  try {
    return parse_config(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string(), e);
  }
}

}  // namespace pyrtri
