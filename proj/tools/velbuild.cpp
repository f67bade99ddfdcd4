#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "runconfig.hpp"
#include "velbuild/checkpoint.hpp"
#include "velbuild/spectrum.hpp"
#include "velbuild/velb_io.hpp"

namespace fs = std::filesystem;
using namespace velbuild;

namespace {

struct CommonArgs {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
};

cli::RunConfig load_config(const CommonArgs& args) {
  cli::RunConfig c = cli::load_run_config(args.config);
  if (args.seed_set) {
    c.seed = args.seed;
    c.gen.seed = args.seed;
    c.train_op.seed = args.seed;
    c.train_ddpm.seed = args.seed;
    c.invert.seed = args.seed;
  }
  if (args.jobs > 0) c.jobs = args.jobs;
  return c;
}

op::HybridOperatorModel load_operator(const cli::RunConfig& c, const std::string& ckpt_path) {
  op::HybridOperatorModel model = op::build_model(c.arch, c.seed);
  const io::Checkpoint ckpt = io::read_checkpoint(ckpt_path);
  auto params = model.params.all();
  io::unpack_state(ckpt, params, nullptr);
  return model;
}

ddpm::DenoiserModel load_denoiser(const cli::RunConfig& c, const std::string& ckpt_path) {
  ddpm::DenoiserModel model = ddpm::build_denoiser(c.denoiser_arch, c.seed);
  const io::Checkpoint ckpt = io::read_checkpoint(ckpt_path);
  auto params = model.params.all();
  io::unpack_state(ckpt, params, nullptr);
  return model;
}

std::string default_path(const cli::RunConfig& c, const std::string& sub) {
  return (fs::path(c.out_dir) / sub).string();
}

void write_profile_csv(const std::string& path, const VelocityField& initial,
                       const VelocityField& inverted, int column) {
  const ProfileSpectrum a = vertical_profile_spectrum(initial, column);
  const ProfileSpectrum b = vertical_profile_spectrum(inverted, column);
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < a.wavenumber.size(); ++k)
    rows.push_back({a.wavenumber[k], a.amplitude[k], b.amplitude[k]});
  io::write_csv(path, "wavenumber,initial,inverted", rows);
}

int cmd_gen_data(const CommonArgs& args) {
  const cli::RunConfig c = load_config(args);
  const AcquisitionGeometry geom =
      cli::make_geometry(c.grid, c.n_src, c.n_rec, c.src_depth, c.rec_depth);
  const std::string dir = default_path(c, "dataset");
  const velgen::DatasetManifest manifest =
      velgen::build_dataset(c.gen, c.n_train, c.n_val, geom, c.lag, c.sim, dir, c.jobs);
  std::cout << "dataset: " << manifest.records.size() << " samples (" << c.n_train << " train, "
            << c.n_val << " val), " << manifest.skipped_indices.size() << " skipped\n"
            << "image_scale: " << manifest.norm.image_scale << "\n"
            << "manifest: " << dir << "/manifest.txt\n";
  return 0;
}

int cmd_train_op(const CommonArgs& args) {
  cli::RunConfig c = load_config(args);
  const velgen::DatasetManifest manifest =
      velgen::DatasetManifest::load(default_path(c, "dataset") + "/manifest.txt");
  const op::LoadedDataset ds = op::load_dataset(manifest);
  op::HybridOperatorModel model = op::build_model(c.arch, c.seed);
  c.train_op.out_dir = default_path(c, c.op_dir);
  const op::TrainResult result = op::train_operator(model, ds, c.train_op);
  std::cout << "train loss: " << result.train_loss.front() << " -> " << result.train_loss.back()
            << "\nval loss: " << result.val_loss.back() << " (best " << result.best_val
            << " at epoch " << result.best_epoch << ")\n";
  if (!ds.val_idx.empty()) std::cout << "held-out nmse: " << op::held_out_nmse(model, ds) << "\n";
  std::cout << "checkpoints: " << result.best_checkpoint << ", " << result.last_checkpoint << "\n";
  return 0;
}

int cmd_train_ddpm(const CommonArgs& args) {
  cli::RunConfig c = load_config(args);
  const velgen::DatasetManifest manifest =
      velgen::DatasetManifest::load(default_path(c, "dataset") + "/manifest.txt");
  std::vector<ddpm::CorpusSample> corpus;
  for (const auto& rec : manifest.train_records()) {
    const velgen::DatasetSample s = velgen::load_sample(manifest, rec);
    corpus.push_back({normalize_velocity(s.v_true, manifest.norm), rec.seed});
  }
  const ddpm::NoiseSchedule sched =
      ddpm::make_linear_schedule(c.ddpm_steps, c.beta_start, c.beta_end);
  ddpm::DenoiserModel model = ddpm::build_denoiser(c.denoiser_arch, c.seed);
  c.train_ddpm.out_dir = default_path(c, c.ddpm_dir);
  const ddpm::DdpmTrainResult result =
      ddpm::train_ddpm(model, manifest.grid, corpus, sched, c.train_ddpm);
  std::cout << "ddpm loss: " << result.epoch_loss.front() << " -> " << result.epoch_loss.back()
            << "\ncheckpoint: " << result.last_checkpoint << "\n";
  return 0;
}

int cmd_sample_ddpm(const CommonArgs& args) {
  const cli::RunConfig c = load_config(args);
  const std::string ckpt = c.ddpm_checkpoint.empty()
                               ? default_path(c, c.ddpm_dir) + "/ddpm_last.velc"
                               : c.ddpm_checkpoint;
  const ddpm::DenoiserModel model = load_denoiser(c, ckpt);
  const ddpm::NoiseSchedule sched =
      ddpm::make_linear_schedule(c.ddpm_steps, c.beta_start, c.beta_end);
  const std::vector<float> unit = ddpm::sample_model(model, c.grid, sched, c.seed);
  NormalizationSpec norm;
  std::vector<float> clamped = unit;
  for (float& v : clamped) v = std::clamp(v, 0.0f, 1.0f);
  const VelocityField field = denormalize_velocity(c.grid, clamped, norm);
  const std::string dir = default_path(c, "samples");
  fs::create_directories(dir);
  char name[64];
  std::snprintf(name, sizeof name, "ddpm_sample_%llu.velb",
                static_cast<unsigned long long>(c.seed));
  const std::string path = dir + "/" + name;
  io::write_grid(path, field);
  std::cout << "sample: " << path << "\n";
  return 0;
}

int cmd_invert(const CommonArgs& args, bool with_ddpm, bool patched) {
  const cli::RunConfig c = load_config(args);
  if (c.invert_v_mig.empty() || c.invert_observed.empty())
    throw ConfigError("invert: [invert] v_mig and observed paths are required");

  const std::string op_ckpt =
      c.op_checkpoint.empty() ? default_path(c, c.op_dir) + "/op_best.velc" : c.op_checkpoint;
  op::HybridOperatorModel model = load_operator(c, op_ckpt);

  const velgen::DatasetManifest manifest =
      velgen::DatasetManifest::load(default_path(c, "dataset") + "/manifest.txt");
  const NormalizationSpec norm = manifest.norm;

  const VelocityField v_mig = io::read_velocity(c.invert_v_mig, c.grid.dz, c.grid.dx);
  const ExtendedImageVolume i_obs =
      io::read_image(c.invert_observed, c.grid.dz, c.grid.dx, c.lag.d_tau);

  std::string sub = "invert";
  if (with_ddpm) sub += "_ddpm";
  if (patched) sub += "_patched";
  const std::string dir = default_path(c, sub);
  fs::create_directories(dir);

  inversion::InversionConfig icfg = c.invert;
  if (!with_ddpm) icfg.diffuse_every = 0;

  ddpm::DenoiserModel denoiser;
  ddpm::NoiseSchedule sched;
  if (with_ddpm) {
    const std::string dd_ckpt = c.ddpm_checkpoint.empty()
                                    ? default_path(c, c.ddpm_dir) + "/ddpm_last.velc"
                                    : c.ddpm_checkpoint;
    denoiser = load_denoiser(c, dd_ckpt);
    sched = ddpm::make_linear_schedule(c.ddpm_steps, c.beta_start, c.beta_end);
  }

  VelocityField v_out;
  if (patched) {
    const inversion::PatchPlan plan =
        inversion::make_patch_plan(v_mig.grid, c.grid.nz, c.grid.nx, c.patch_overlap);
    v_out = inversion::patch_invert(model, with_ddpm ? &denoiser : nullptr,
                                    with_ddpm ? &sched : nullptr, v_mig, i_obs, plan, norm, icfg,
                                    c.jobs);
    std::cout << "patches: " << plan.patches.size() << "\n";
  } else {
    icfg.loss_csv = dir + "/loss.csv";
    inversion::InversionResult res;
    if (with_ddpm) {
      const ddpm::DenoiserFn fn = ddpm::denoiser_fn(denoiser, v_mig.grid);
      res = inversion::invert_no_ddpm(model, fn, sched, v_mig, i_obs, norm, icfg);
    } else {
      res = inversion::invert_no(model, v_mig, i_obs, norm, icfg);
    }
    std::cout << "loss: " << res.loss.front() << " -> " << res.loss.back() << "\n";
    v_out = std::move(res.v_inverted);
  }

  const std::string out_path = dir + "/v_inverted.velb";
  io::write_grid(out_path, v_out);
  const int column = c.profile_column >= 0 ? c.profile_column : v_mig.grid.nx / 2;
  write_profile_csv(dir + "/spectrum.csv", v_mig, v_out, column);
  std::cout << "inverted: " << out_path << "\n";
  return 0;
}

int cmd_rtm(const CommonArgs& args) {
  const cli::RunConfig c = load_config(args);
  if (c.rtm_v_true.empty() || c.rtm_v_mig.empty())
    throw ConfigError("rtm: [rtm] v_true and v_mig paths are required");
  const VelocityField v_true = io::read_velocity(c.rtm_v_true, c.grid.dz, c.grid.dx);
  const VelocityField v_mig = io::read_velocity(c.rtm_v_mig, c.grid.dz, c.grid.dx);
  const AcquisitionGeometry geom =
      cli::make_geometry(v_true.grid, c.n_src, c.n_rec, c.src_depth, c.rec_depth);
  const ExtendedImageVolume img =
      sim::model_and_migrate(v_true, v_mig, geom, c.lag, c.sim, c.jobs);
  const std::string out = c.rtm_out.empty() ? default_path(c, "rtm_image.velb") : c.rtm_out;
  fs::create_directories(fs::path(out).parent_path());
  io::write_grid(out, img);
  std::cout << "image: " << out << "\n";
  return 0;
}

int cmd_spectrum(const CommonArgs& args) {
  const cli::RunConfig c = load_config(args);
  if (c.spectrum_velocity.empty())
    throw ConfigError("spectrum: [spectrum] velocity path is required");
  const VelocityField v = io::read_velocity(c.spectrum_velocity, c.grid.dz, c.grid.dx);
  const int column = c.spectrum_column >= 0 ? c.spectrum_column : v.grid.nx / 2;
  const ProfileSpectrum spec = vertical_profile_spectrum(v, column);
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < spec.wavenumber.size(); ++k)
    rows.push_back({spec.wavenumber[k], spec.amplitude[k]});
  const std::string out =
      c.spectrum_out.empty() ? default_path(c, "spectrum.csv") : c.spectrum_out;
  fs::create_directories(fs::path(out).parent_path());
  io::write_csv(out, "wavenumber,amplitude", rows);
  std::cout << "spectrum: " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale generative-neural-operator velocity model building"};
  app.require_subcommand(1);

  CommonArgs args;
  bool with_ddpm = false, patched = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config, "Run configuration file")->required();
    sub->add_option("--seed", args.seed, "Master seed override")
        ->each([&](const std::string&) { args.seed_set = true; });
    sub->add_option("--jobs", args.jobs, "Worker threads for shots/patches");
  };

  add_common(app.add_subcommand("gen-data", "Generate the training/validation dataset"));
  add_common(app.add_subcommand("train-op", "Train the image-prediction operator"));
  add_common(app.add_subcommand("train-ddpm", "Train the velocity diffusion prior"));
  add_common(app.add_subcommand("sample-ddpm", "Draw one unconditional prior sample"));
  CLI::App* invert = app.add_subcommand("invert", "Invert an observed image volume");
  add_common(invert);
  invert->add_flag("--with-ddpm", with_ddpm, "Interleave diffusion refinement");
  invert->add_flag("--patched", patched, "Patch-based inversion on a larger grid");
  add_common(app.add_subcommand("rtm", "Model and migrate with explicit velocities"));
  add_common(app.add_subcommand("spectrum", "Vertical-profile wavenumber spectrum"));

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("gen-data")) return cmd_gen_data(args);
    if (app.got_subcommand("train-op")) return cmd_train_op(args);
    if (app.got_subcommand("train-ddpm")) return cmd_train_ddpm(args);
    if (app.got_subcommand("sample-ddpm")) return cmd_sample_ddpm(args);
    if (app.got_subcommand("invert")) return cmd_invert(args, with_ddpm, patched);
    if (app.got_subcommand("rtm")) return cmd_rtm(args);
    if (app.got_subcommand("spectrum")) return cmd_spectrum(args);
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
