#pragma once

#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pyrtri/analysis/ablation.hpp"
#include "pyrtri/analysis/marching_cubes.hpp"
#include "pyrtri/analysis/metrics.hpp"
#include "pyrtri/analysis/spectrum.hpp"
#include "pyrtri/diff/fit.hpp"
#include "pyrtri/diff/gradcheck.hpp"
#include "pyrtri/guidance/cameras.hpp"
#include "pyrtri/guidance/oracle.hpp"
#include "pyrtri/guidance/refine.hpp"
#include "pyrtri/guidance/remote.hpp"
#include "pyrtri/guidance/sds.hpp"
#include "pyrtri/io/config.hpp"
#include "pyrtri/io/grid_file.hpp"
#include "pyrtri/io/image_io.hpp"
#include "pyrtri/io/weights.hpp"
#include "pyrtri/synthesis/inversion.hpp"

namespace pyrtri {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- sphere fixture

inline constexpr double kSphereRadius = 0.5;

/// Soft-edged sphere of radius 0.5 whose color varies linearly with position.
struct SphereField {
  double max_density = 30.0;
  double edge = 0.02;

  int color_features() const { return 3; }

  template <typename T>
  T operator()(const Point3<T>& p, std::span<T> color) const {
    const double x = p.x, y = p.y, z = p.z;
    color[0] = static_cast<T>(0.5 + 0.8 * x);
    color[1] = static_cast<T>(0.5 + 0.8 * y);
    color[2] = static_cast<T>(0.5 + 0.8 * z);
    const double r = std::sqrt(x * x + y * y + z * z);
    return static_cast<T>(max_density * sigmoid((kSphereRadius - r) / edge));
  }
};

/// Ground truth of the sphere over a white background, marched densely without jitter.
inline Image<float> render_sphere(const CameraPose& camera, double bound_margin = kDefaultBoundMargin,
                                  int samples = 256) {
  const SphereField field;
  const auto comp = march_and_composite<float>(field, camera_rays(camera, bound_margin), samples, 0, false);
  Image<float> rgb(camera.image_size, camera.image_size, 3);
  for (std::size_t i = 0; i < rgb.pixel_count(); ++i)
    for (int c = 0; c < 3; ++c)
      rgb.data[i * 3 + c] = std::clamp(comp.feature.data[i * 3 + c] + (1.0f - comp.weight_sum.data[i]), 0.0f, 1.0f);
  return rgb;
}

struct SphereDataset {
  std::vector<CameraPose> views;
  std::vector<Image<float>> images;
  CameraPose held_out;
  Image<float> held_out_image;
};

/// `count` views on a ring that alternates between the three polar bands; the held-out view sits
/// halfway between the first two training azimuths.
inline SphereDataset sphere_dataset(int count, const CameraPose& base, double bound_margin = kDefaultBoundMargin) {
  detail::require(count >= 1, "sphere dataset needs at least one view");
  SphereDataset d;
  for (int i = 0; i < count; ++i) {
    CameraPose p = base;
    p.azimuth_deg = 360.0 * i / count;
    p.polar_deg = kPolarBands[i % 3][0] + 5.0;
    d.views.push_back(p);
    d.images.push_back(render_sphere(p, bound_margin));
  }
  d.held_out = base;
  d.held_out.azimuth_deg = 180.0 / count;
  d.held_out.polar_deg = 80.0;
  d.held_out_image = render_sphere(d.held_out, bound_margin);
  return d;
}

// ---------------------------------------------------------------- shared construction

/// Decoder with a ToRGB that passes the first three color features straight through over
/// a white background, so fitted grids can reach any color.
inline NeuralRenderer<float> fit_renderer(const PipelineConfig& cfg) {
  detail::require(cfg.color_features >= 3, "fitting needs at least 3 color features");
  NeuralRenderer<float> r;
  r.decoder = DecoderParams<float>::random(cfg.channels, mix_seed(cfg.seed, 0xdec), cfg.hidden, cfg.color_features);
  r.decoder.b2[0] += static_cast<float>(cfg.density_bias);
  r.to_rgb = ToRgbParams<float>::identity_modulation(cfg.latent_dim, cfg.color_features);
  for (int c = 0; c < 3; ++c) r.to_rgb.linear[c * cfg.color_features + c] = 1.0f;
  return r;
}

inline NeuralRenderer<float> default_renderer(const PipelineConfig& cfg) {
  if (!cfg.renderer_weights.empty()) return load_renderer(cfg.renderer_weights);
  auto r = NeuralRenderer<float>::random(cfg.channels, cfg.latent_dim, mix_seed(cfg.seed, 0xdec), cfg.hidden,
                                         cfg.color_features);
  r.decoder.b2[0] += static_cast<float>(cfg.density_bias);
  return r;
}

inline SynthesisNetwork<float> default_network(const PipelineConfig& cfg) {
  if (!cfg.network_weights.empty()) return load_network(cfg.network_weights);
  return SynthesisNetwork<float>::random(cfg.synthesis(), mix_seed(cfg.seed, 0x5e7));
}

inline CameraPose front_camera(const PipelineConfig& cfg) {
  CameraPose c = cfg.camera;
  c.azimuth_deg = 0.0;
  c.polar_deg = 90.0;
  return c;
}

inline RenderOptions eval_options(const PipelineConfig& cfg) {
  RenderOptions o = cfg.render;
  o.jitter = false;
  return o;
}

inline std::string number(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

inline Image<float> latent_image(std::span<const float> w) {
  Image<float> img(1, static_cast<int>(w.size()), 1);
  std::copy(w.begin(), w.end(), img.data.begin());
  return img;
}

inline std::vector<float> load_latent(const fs::path& path) {
  const auto img = load_image(path);
  if (img.height != 1 || img.channels != 1) throw IoError(path.string() + ": not a latent file");
  return img.data;
}

// ---------------------------------------------------------------- fit

struct PosedImages {
  std::vector<CameraPose> views;
  std::vector<Image<float>> images;
};

/// CSV with header "image,azimuth,polar" and optional "radius,fov" columns; image paths are
/// relative to the CSV. Missing columns fall back to the configured camera.
inline PosedImages load_posed_images(const fs::path& csv, const CameraPose& base) {
  std::istringstream in(read_file(csv));
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(detail::trim(item));
    return out;
  };
  if (!std::getline(in, line)) throw IoError(csv.string() + ": empty pose file");
  const auto header = split(line);
  if (header.size() < 3 || header[0] != "image" || header[1] != "azimuth" || header[2] != "polar")
    throw IoError(csv.string() + ": header must start with image,azimuth,polar");
  PosedImages out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) throw IoError(csv.string() + ": wrong field count on line " + std::to_string(row));
    CameraPose p = base;
    try {
      p.azimuth_deg = std::stod(f[1]);
      p.polar_deg = std::stod(f[2]);
      for (std::size_t k = 3; k < header.size(); ++k) {
        if (header[k] == "radius") p.radius = std::stod(f[k]);
        else if (header[k] == "fov") p.fov_y_deg = std::stod(f[k]);
        else throw IoError(csv.string() + ": unknown column " + header[k]);
      }
    } catch (const std::logic_error&) {
      throw IoError(csv.string() + ": bad number on line " + std::to_string(row));
    }
    auto img = load_image(csv.parent_path() / f[0]);
    if (img.height != img.width || img.channels != 3)
      throw IoError(f[0] + ": expected a square RGB image");
    p.image_size = img.height;
    out.views.push_back(p);
    out.images.push_back(std::move(img));
  }
  return out;
}

struct FitOutcome {
  FitResult fit;
  PyramidTriGrid<float> grid;
  std::optional<double> held_out_psnr;
};

/// Fits a fresh zero pyramid to posed images, writing grid.ptg, renderer.ptw, latent.pgim and loss.csv.
/// Without explicit images, fits the synthetic sphere and reports PSNR on its held-out view.
inline FitOutcome cmd_fit(const PipelineConfig& cfg, const std::optional<PosedImages>& data = std::nullopt) {
  const fs::path dir = cfg.out;
  const auto renderer = fit_renderer(cfg);
  const std::vector<float> w(cfg.latent_dim, 0.0f);
  FitOutcome out;
  out.grid = PyramidTriGrid<float>(std::span<const int>(cfg.resolutions), cfg.channels, cfg.depth_layers);
  std::optional<SphereDataset> sphere;
  if (!data) sphere = sphere_dataset(cfg.fit_views, cfg.camera, cfg.render.bound_margin);
  const auto& views = data ? data->views : sphere->views;
  const auto& images = data ? data->images : sphere->images;
  out.fit = fit_views(out.grid, renderer, std::span<const float>(w), views, images, cfg.fit);
  if (sphere) {
    const auto img = render(out.grid, renderer, sphere->held_out, std::span<const float>(w), 0, eval_options(cfg));
    out.held_out_psnr = psnr(img.rgb, sphere->held_out_image);
    write_image_pair(dir / "held_out.png", img.rgb);
    write_image_pair(dir / "held_out_target.png", sphere->held_out_image);
  }
  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < out.fit.loss_trace.size(); ++i) csv += std::to_string(i) + "," + number(out.fit.loss_trace[i]) + "\n";
  atomic_write(dir / "loss.csv", csv);
  save_grid(dir / "grid.ptg", out.grid);
  save_renderer(dir / "renderer.ptw", renderer);
  write_pgim(dir / "latent.pgim", latent_image(w));
  return out;
}

// ---------------------------------------------------------------- generate

/// Oracle guidance for offline runs: a teacher scene synthesized by the same network at a
/// seeded latent is the "image model"; its render at the conditioning camera is the target.
class TeacherOracle : public LinearPullProvider {
 public:
  TeacherOracle(const PipelineConfig& cfg, const SynthesisNetwork<float>& net, const NeuralRenderer<float>& renderer)
      : LinearPullProvider([this](const Conditioning& c) { return target(c); }, cfg.oracle_lambda),
        renderer_(renderer),
        base_(cfg.camera),
        options_(eval_options(cfg)) {
    auto rng = make_rng(cfg.seed, 0x7eac);
    latent_.resize(net.config.latent_dim);
    for (auto& v : latent_) v = static_cast<float>(0.5 * standard_normal(rng));
    teacher_ = synthesize(net, std::span<const float>(latent_));
  }

  Image<double> target(const Conditioning& c) const {
    const CameraPose cam = c.camera.value_or(base_);
    return render(teacher_, renderer_, cam, std::span<const float>(latent_), 0, options_).rgb.cast<double>();
  }

  const std::vector<float>& teacher_latent() const { return latent_; }

 private:
  NeuralRenderer<float> renderer_;
  CameraPose base_;
  RenderOptions options_;
  std::vector<float> latent_;
  PyramidTriGrid<float> teacher_;
};

inline std::unique_ptr<GuidanceProvider> make_provider(const PipelineConfig& cfg, const SynthesisNetwork<float>& net,
                                                       const NeuralRenderer<float>& renderer) {
  if (cfg.provider == "oracle") return std::make_unique<TeacherOracle>(cfg, net, renderer);
  const std::string url = cfg.provider.substr(std::string("remote:").size());
  auto remote = std::make_unique<RemoteProvider>(url, std::chrono::milliseconds(cfg.timeout_ms));
  bool up = false;
  try {
    up = remote->health() == wire::kProtocolVersion;
  } catch (const TransportError&) {
  }
  if (!up)
    throw ProviderError("guidance provider at " + url + " is unavailable and no oracle fallback is configured", false);
  return remote;
}

enum class ResumeStage { None, Inversion, Sds };

struct GenerateOptions {
  std::optional<fs::path> resume_grid;  // grid file written at the end of `resume_stage`
  ResumeStage resume_stage = ResumeStage::None;
};

struct GenerateOutcome {
  std::vector<fs::path> view_images;
  std::vector<fs::path> turntable_images;
  std::optional<InversionResult<float>> inversion;
  std::optional<SdsRunResult> sds;
  std::optional<RefineResult> refine;
  PyramidTriGrid<float> grid;
  std::vector<float> latent;
};

/// invert -> synthesize -> SDS -> refine, then 21 protocol views and a 36-frame turntable.
/// Stage grids: stage1_inverted.ptg, stage2_sds.ptg, stage3_refined.ptg; grid.ptg is the final one.
/// Resuming loads a stage grid plus latent.pgim from its directory and runs the later stages.
inline GenerateOutcome cmd_generate(const PipelineConfig& cfg, const GenerateOptions& opts = {}) {
  const fs::path dir = cfg.out;
  fs::create_directories(dir);
  const auto renderer = default_renderer(cfg);
  const auto net = default_network(cfg);
  renderer.validate();
  detail::require(renderer.decoder.in_channels == cfg.channels, "renderer input width does not match pyramid channels");
  const auto provider = make_provider(cfg, net, renderer);
  const CameraPose front = front_camera(cfg);

  GenerateOutcome out;
  ResumeStage stage = ResumeStage::None;
  if (opts.resume_grid) {
    detail::require(opts.resume_stage != ResumeStage::None, "resuming needs a stage");
    stage = opts.resume_stage;
    out.grid = load_grid(*opts.resume_grid);
    out.latent = load_latent(opts.resume_grid->parent_path() / "latent.pgim");
    detail::require(out.latent.size() == std::size_t(cfg.latent_dim), "stored latent has the wrong dimension");
  } else {
    Image<float> reference;
    if (!cfg.reference.empty()) {
      reference = load_image(cfg.reference);
    } else {
      const auto noise = sample_noise(front.image_size, front.image_size, 3, mix_seed(cfg.seed, 0x4ef));
      reference = provider->denoise(noise, 1.0, Conditioning{cfg.prompt, cfg.seed, front}).cast<float>();
    }
    detail::require(reference.channels == 3 && reference.height == front.image_size && reference.width == front.image_size,
                    "reference image must be RGB at the render size");
    write_image_pair(dir / "reference.png", reference);
    out.latent.assign(cfg.latent_dim, 0.0f);
    if (cfg.invert) {
      out.inversion = invert(net, renderer, reference, front, std::span<const float>(out.latent), cfg.inversion);
      out.latent = out.inversion->latent;
      std::string csv = "iteration,loss\n";
      for (std::size_t i = 0; i < out.inversion->loss_trace.size(); ++i)
        csv += std::to_string(i) + "," + number(out.inversion->loss_trace[i]) + "\n";
      atomic_write(dir / "inversion.csv", csv);
    }
    write_pgim(dir / "latent.pgim", latent_image(out.latent));
    out.grid = synthesize(net, std::span<const float>(out.latent));
    save_grid(dir / "stage1_inverted.ptg", out.grid);
    stage = ResumeStage::Inversion;
  }
  if (opts.resume_grid) write_pgim(dir / "latent.pgim", latent_image(out.latent));
  const std::span<const float> w(out.latent);

  if (stage == ResumeStage::Inversion) {
    PyramidAdam<float> opt(out.grid);
    out.sds = sds_run(out.grid, opt, renderer, w, *provider, cfg.sds);
    std::string csv = "step,azimuth,polar,timestep,omega,residual_rms,applied\n";
    for (const auto& d : out.sds->steps)
      csv += std::to_string(d.step) + "," + number(d.camera.azimuth_deg) + "," + number(d.camera.polar_deg) + "," +
             number(d.timestep) + "," + number(d.omega) + "," + number(d.residual_rms) + "," +
             (d.applied ? "1" : "0") + "\n";
    atomic_write(dir / "sds.csv", csv);
    save_grid(dir / "stage2_sds.ptg", out.grid);
  }

  if (!cfg.skip_refine) {
    out.refine = refine(out.grid, renderer, w, *provider, cfg.refine);
    for (const auto& msg : out.refine->warnings) std::cerr << "warning: " << msg << "\n";
    std::string csv = "view,azimuth,polar,initial_loss,final_loss\n";
    for (std::size_t k = 0; k < out.refine->used_views.size(); ++k) {
      const int v = out.refine->used_views[k];
      csv += std::to_string(v) + "," + number(out.refine->views[v].azimuth_deg) + "," +
             number(out.refine->views[v].polar_deg) + "," + number(out.refine->initial_view_losses[k]) + "," +
             number(out.refine->final_view_losses[k]) + "\n";
    }
    atomic_write(dir / "refine.csv", csv);
    save_grid(dir / "stage3_refined.ptg", out.grid);
  }

  save_grid(dir / "grid.ptg", out.grid);
  save_renderer(dir / "renderer.ptw", renderer);
  save_network(dir / "network.ptw", net);

  const auto options = eval_options(cfg);
  const auto views = protocol_21_views(cfg.camera, cfg.seed);
  char name[32];
  for (std::size_t i = 0; i < views.size(); ++i) {
    std::snprintf(name, sizeof name, "view_%02zu.png", i);
    out.view_images.push_back(dir / "views" / name);
    write_image_pair(out.view_images.back(), render(out.grid, renderer, views[i], w, 0, options).rgb);
  }
  const auto frames = turntable(cfg.camera, 36);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    std::snprintf(name, sizeof name, "frame_%02zu.png", i);
    out.turntable_images.push_back(dir / "turntable" / name);
    write_image_pair(out.turntable_images.back(), render(out.grid, renderer, frames[i], w, 0, options).rgb);
  }
  return out;
}

// ---------------------------------------------------------------- thin wrappers

/// Renders a stored grid from the configured camera to render.png (+ sidecar).
inline Image<float> cmd_render(const PipelineConfig& cfg, const fs::path& grid, const std::optional<fs::path>& latent) {
  const auto pyr = load_grid(grid);
  const auto renderer = default_renderer(cfg);
  std::vector<float> w = latent ? load_latent(*latent) : std::vector<float>(renderer.to_rgb.latent_dim, 0.0f);
  auto img = render(pyr, renderer, cfg.camera, std::span<const float>(w), 0, eval_options(cfg)).rgb;
  write_image_pair(fs::path(cfg.out) / "render.png", img);
  return img;
}

/// Density lattice over [-1,1]^3 through the pyramid and decoder, then marching cubes; mesh.obj
/// is written even when the surface is empty.
inline MeshReport cmd_mesh(const PipelineConfig& cfg, const fs::path& grid) {
  const auto pyr = load_grid(grid);
  const auto renderer = default_renderer(cfg);
  auto rep = extract_mesh(pyr, renderer.decoder, cfg.mesh_resolution, cfg.iso, cfg.exec());
  std::string obj = "# iso " + number(cfg.iso) + ", density range [" + number(rep.min_density) + ", " +
                    number(rep.max_density) + "]" + (rep.empty ? ", empty surface" : "") + "\n";
  atomic_write(fs::path(cfg.out) / "mesh.obj", obj + to_obj(rep.mesh));
  return rep;
}

/// spectrum.csv: a comment line with cutoff and high_band_ratio, then bin_center,power rows.
inline SpectrumReport cmd_spectrum(const PipelineConfig& cfg, const fs::path& image) {
  const auto rep = power_spectrum(load_image(image), cfg.cutoff);
  std::string csv = "# cutoff=" + number(rep.cutoff) + " high_band_ratio=" + number(rep.high_band_ratio) + "\n";
  csv += "bin_center,power\n";
  for (std::size_t i = 0; i < rep.bin_centers.size(); ++i)
    csv += number(rep.bin_centers[i]) + "," + number(rep.power[i]) + "\n";
  atomic_write(fs::path(cfg.out) / "spectrum.csv", csv);
  return rep;
}

struct AblateOutcome {
  AblationReport noisy;
  AblationReport control;
};

/// Noisy-supervision ablation plus its zero-noise control; ablation.csv holds both.
inline AblateOutcome cmd_ablate(const PipelineConfig& cfg) {
  AblationConfig a;
  a.fit.render.exec = cfg.exec();
  AblateOutcome out;
  out.noisy = artifact_ablation(cfg.seed, a);
  a.noise = 0.0;
  out.control = artifact_ablation(cfg.seed, a);
  atomic_write(fs::path(cfg.out) / "ablation.csv", out.noisy.to_csv() + out.control.to_csv());
  return out;
}

struct GradcheckOutcome {
  std::vector<GradcheckReport> scenes;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Finite-difference check of the renderer adjoint on seeded small scenes; gradcheck.csv has one row per scene.
inline GradcheckOutcome cmd_gradcheck(const PipelineConfig& cfg) {
  GradcheckOutcome out;
  std::string csv = "scene,checked,max_rel_error,threshold,passed,worst\n";
  for (int s = 0; s < cfg.gradcheck_scenes; ++s) {
    const std::uint64_t seed = mix_seed(cfg.seed, 0x9c00 + s);
    const auto scene = make_gradcheck_scene(seed);
    auto rep = gradcheck(scene, seed, cfg.gradcheck_step, cfg.gradcheck_threshold);
    out.max_rel_error = std::max(out.max_rel_error, rep.max_rel_error);
    out.passed = out.passed && rep.passed;
    csv += std::to_string(s) + "," + std::to_string(rep.checked) + "," + number(rep.max_rel_error) + "," +
           number(rep.threshold) + "," + (rep.passed ? "1," : "0,") + "\"" + rep.location + "\"\n";
    out.scenes.push_back(std::move(rep));
  }
  atomic_write(fs::path(cfg.out) / "gradcheck.csv", csv);
  return out;
}

}  // namespace pyrtri
