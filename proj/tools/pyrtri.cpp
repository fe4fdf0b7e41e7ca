#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "pyrtri/io/pipeline.hpp"

namespace {

using namespace pyrtri;

// exit codes
constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kBadInput = 2;
constexpr int kRuntime = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string provider;
  bool skip_refine = false;
  std::string out;
};

PipelineConfig resolve(const Globals& g) {
  PipelineConfig cfg = g.config.empty() ? parse_config("") : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.deterministic) cfg.deterministic = true;
  if (!g.provider.empty()) {
    if (g.provider != "oracle" && g.provider.rfind("remote:", 0) != 0)
      throw ConfigError("--provider must be oracle or remote:URL");
    cfg.provider = g.provider;
  }
  if (g.skip_refine) cfg.skip_refine = true;
  if (!g.out.empty()) cfg.out = g.out;
  cfg.propagate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pyramid tri-grid text-to-3D toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "global seed (overrides [run] seed)");
  app.add_flag("--deterministic", g.deterministic, "single-threaded, bit-reproducible execution");
  app.add_option("--provider", g.provider, "guidance provider: oracle or remote:URL");
  app.add_flag("--skip-refine", g.skip_refine, "generate: stop after the SDS stage");
  app.add_option("--out", g.out, "output directory (overrides [run] out)");

  auto* fit = app.add_subcommand("fit", "fit a pyramid to posed images (default: the synthetic sphere)");
  std::string views_csv;
  fit->add_option("--views", views_csv, "CSV of image,azimuth,polar[,radius,fov]")->check(CLI::ExistingFile);

  auto* generate = app.add_subcommand("generate", "invert, synthesize, SDS, refine, then render views");
  std::string prompt, reference, resume, resume_stage = "sds";
  generate->add_option("prompt", prompt, "text prompt, passed verbatim to the provider");
  generate->add_option("--reference", reference, "reference image instead of asking the provider")
      ->check(CLI::ExistingFile);
  generate->add_option("--resume", resume, "stage grid file to resume from")->check(CLI::ExistingFile);
  generate->add_option("--resume-stage", resume_stage, "stage that wrote the resume grid")
      ->check(CLI::IsMember({"inversion", "sds"}));

  app.add_subcommand("ablate", "pyramid vs single-resolution artifact ablation");
  app.add_subcommand("gradcheck", "finite-difference check of renderer gradients");

  auto* mesh = app.add_subcommand("mesh", "marching-cubes mesh of a grid's density");
  std::string mesh_grid;
  std::optional<int> mesh_res;
  std::optional<double> mesh_iso;
  mesh->add_option("grid", mesh_grid, "grid file")->required()->check(CLI::ExistingFile);
  mesh->add_option("--resolution", mesh_res, "lattice resolution");
  mesh->add_option("--iso", mesh_iso, "density iso-level");

  auto* spectrum = app.add_subcommand("spectrum", "radially averaged power spectrum of an image");
  std::string spectrum_image;
  spectrum->add_option("image", spectrum_image, "PNG or .pgim image")->required()->check(CLI::ExistingFile);

  auto* render_cmd = app.add_subcommand("render", "render a grid from one camera");
  std::string render_grid, render_latent;
  std::optional<double> azimuth, polar;
  render_cmd->add_option("grid", render_grid, "grid file")->required()->check(CLI::ExistingFile);
  render_cmd->add_option("--latent", render_latent, "latent .pgim")->check(CLI::ExistingFile);
  render_cmd->add_option("--azimuth", azimuth, "degrees");
  render_cmd->add_option("--polar", polar, "degrees from +Z");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadInput;
  }

  try {
    PipelineConfig cfg = resolve(g);
    if (fit->parsed()) {
      std::optional<PosedImages> data;
      if (!views_csv.empty()) data = load_posed_images(views_csv, cfg.camera);
      const auto r = cmd_fit(cfg, data);
      std::printf("fit: %zu steps, final batch loss %.6g, skipped %ld\n", r.fit.loss_trace.size(),
                  r.fit.loss_trace.empty() ? 0.0 : r.fit.loss_trace.back(), r.fit.skipped_steps);
      if (r.held_out_psnr) std::printf("held-out PSNR %.3f dB\n", *r.held_out_psnr);
    } else if (generate->parsed()) {
      if (!prompt.empty()) {
        cfg.prompt = prompt;
        cfg.propagate();
      }
      if (!reference.empty()) cfg.reference = reference;
      GenerateOptions opts;
      if (!resume.empty()) {
        opts.resume_grid = resume;
        opts.resume_stage = resume_stage == "sds" ? ResumeStage::Sds : ResumeStage::Inversion;
      }
      const auto r = cmd_generate(cfg, opts);
      std::printf("generate: %zu views, %zu turntable frames in %s\n", r.view_images.size(), r.turntable_images.size(),
                  cfg.out.c_str());
      if (r.refine)
        std::printf("refine: mean loss %.6g -> %.6g over %zu views\n", r.refine->initial_mean_loss,
                    r.refine->final_mean_loss, r.refine->used_views.size());
    } else if (app.got_subcommand("ablate")) {
      const auto r = cmd_ablate(cfg);
      std::printf("noisy:   single %.5f  pyramid %.5f\n", r.noisy.single.high_band_ratio, r.noisy.pyramid.high_band_ratio);
      std::printf("control: single %.5f  pyramid %.5f\n", r.control.single.high_band_ratio,
                  r.control.pyramid.high_band_ratio);
    } else if (app.got_subcommand("gradcheck")) {
      const auto r = cmd_gradcheck(cfg);
      for (std::size_t s = 0; s < r.scenes.size(); ++s)
        std::printf("scene %zu: %zu entries, max rel error %.3g (%s)\n", s, r.scenes[s].checked,
                    r.scenes[s].max_rel_error, r.scenes[s].location.c_str());
      std::printf("gradcheck %s: max rel error %.3g, threshold %.3g\n", r.passed ? "passed" : "FAILED",
                  r.max_rel_error, cfg.gradcheck_threshold);
      return r.passed ? kOk : kCheckFailed;
    } else if (mesh->parsed()) {
      if (mesh_res) cfg.mesh_resolution = *mesh_res;
      if (mesh_iso) cfg.iso = *mesh_iso;
      const auto r = cmd_mesh(cfg, mesh_grid);
      if (r.empty)
        std::printf("mesh: empty surface (density range [%g, %g], iso %g)\n", r.min_density, r.max_density, cfg.iso);
      else
        std::printf("mesh: %zu vertices, %zu triangles\n", r.mesh.vertices.size(), r.mesh.triangles.size());
    } else if (spectrum->parsed()) {
      const auto r = cmd_spectrum(cfg, spectrum_image);
      std::printf("high_band_ratio %.6g (cutoff %.3g)\n", r.high_band_ratio, r.cutoff);
    } else if (render_cmd->parsed()) {
      if (azimuth) cfg.camera.azimuth_deg = *azimuth;
      if (polar) cfg.camera.polar_deg = *polar;
      cmd_render(cfg, render_grid, render_latent.empty() ? std::nullopt : std::optional<fs::path>(render_latent));
      std::printf("render: wrote %s\n", (fs::path(cfg.out) / "render.png").c_str());
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kBadInput;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
