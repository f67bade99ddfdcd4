#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "velbuild/ddpm.hpp"
#include "velbuild/error.hpp"
#include "velbuild/grid.hpp"
#include "velbuild/inversion.hpp"
#include "velbuild/neural_op.hpp"
#include "velbuild/velgen.hpp"
#include "velbuild/wavesim.hpp"

namespace velbuild::cli {

/// Flat INI-style config: [section] headers, key = value lines, # or ;
/// comments. Every key must be consumed by the schema below; leftovers are
/// reported as errors so typos cannot silently fall back to defaults.
class IniFile {
 public:
  static IniFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(IoError::Kind::open_failed, "config: cannot open " + path);
    IniFile ini;
    ini.path_ = path;
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string s = trim(line.substr(0, line.find_first_of("#;")));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') throw ConfigError(where(path, line_no) + "unterminated section");
        section = trim(s.substr(1, s.size() - 2));
        if (section.empty()) throw ConfigError(where(path, line_no) + "empty section name");
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(where(path, line_no) + "expected key = value");
      const std::string key = trim(s.substr(0, eq));
      if (key.empty()) throw ConfigError(where(path, line_no) + "empty key");
      if (section.empty()) throw ConfigError(where(path, line_no) + "key outside any section");
      if (!ini.values_.emplace(section + "." + key, trim(s.substr(eq + 1))).second)
        throw ConfigError(where(path, line_no) + "duplicate key '" + section + "." + key + "'");
    }
    return ini;
  }

  std::string get_string(const std::string& sec, const std::string& key, std::string def) {
    auto it = values_.find(sec + "." + key);
    if (it == values_.end()) return def;
    consumed_.insert(it->first);
    return it->second;
  }

  double get_double(const std::string& sec, const std::string& key, double def) {
    return parse<double>(sec, key, def);
  }
  int get_int(const std::string& sec, const std::string& key, int def) {
    return parse<int>(sec, key, def);
  }
  std::uint64_t get_u64(const std::string& sec, const std::string& key, std::uint64_t def) {
    return parse<std::uint64_t>(sec, key, def);
  }

  /// Throws if any key was never consumed.
  void finish() const {
    std::string unknown;
    for (const auto& [key, value] : values_)
      if (!consumed_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    if (!unknown.empty())
      throw ConfigError("config " + path_ + ": unknown keys: " + unknown);
  }

 private:
  template <typename T>
  T parse(const std::string& sec, const std::string& key, T def) {
    auto it = values_.find(sec + "." + key);
    if (it == values_.end()) return def;
    consumed_.insert(it->first);
    std::istringstream ss(it->second);
    T out;
    ss >> out;
    if (ss.fail() || !ss.eof())
      throw ConfigError("config " + path_ + ": bad value for " + sec + "." + key + ": '" +
                        it->second + "'");
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }
  static std::string where(const std::string& path, int line) {
    return "config " + path + ":" + std::to_string(line) + ": ";
  }

  std::string path_;
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

/// Everything a run needs, one section per module.
struct RunConfig {
  std::uint64_t seed = 1234;
  std::string out_dir = "runs/desk";
  int jobs = 1;

  Grid2D grid{64, 128, 10.0, 10.0};
  sim::LagAxis lag;
  sim::SimConfig sim;
  int n_src = 8, n_rec = 64, src_depth = 2, rec_depth = 2;

  velgen::ModelGenConfig gen;
  int n_train = 64, n_val = 16;

  op::OperatorArch arch;
  op::TrainConfig train_op;
  std::string op_dir = "op";

  ddpm::DenoiserArch denoiser_arch;
  ddpm::DdpmTrainConfig train_ddpm;
  int ddpm_steps = 1000;
  double beta_start = 1e-4, beta_end = 0.02;
  std::string ddpm_dir = "ddpm";

  inversion::InversionConfig invert;
  std::string op_checkpoint, ddpm_checkpoint;
  std::string invert_v_mig, invert_observed;
  double patch_overlap = 0.5;
  int profile_column = -1;  // -1 -> nx / 2

  std::string rtm_v_true, rtm_v_mig, rtm_out;
  std::string spectrum_velocity, spectrum_out;
  int spectrum_column = -1;
};

inline RunConfig load_run_config(const std::string& path) {
  IniFile ini = IniFile::load(path);
  RunConfig c;

  c.seed = ini.get_u64("run", "seed", c.seed);
  c.out_dir = ini.get_string("run", "out_dir", c.out_dir);
  c.jobs = ini.get_int("run", "jobs", c.jobs);

  c.grid.nz = ini.get_int("grid", "nz", c.grid.nz);
  c.grid.nx = ini.get_int("grid", "nx", c.grid.nx);
  c.grid.dz = ini.get_double("grid", "dz", c.grid.dz);
  c.grid.dx = ini.get_double("grid", "dx", c.grid.dx);

  c.sim.nt = ini.get_int("sim", "nt", 1200);
  c.sim.dt = ini.get_double("sim", "dt", 0.001);
  c.sim.f_peak = ini.get_double("sim", "f_peak", c.sim.f_peak);
  c.sim.halo = ini.get_int("sim", "halo", c.sim.halo);
  c.sim.taper_strength = ini.get_double("sim", "taper_strength", c.sim.taper_strength);
  c.n_src = ini.get_int("sim", "n_src", c.n_src);
  c.n_rec = ini.get_int("sim", "n_rec", c.n_rec);
  c.src_depth = ini.get_int("sim", "src_depth", c.src_depth);
  c.rec_depth = ini.get_int("sim", "rec_depth", c.rec_depth);

  c.lag.n_lag = ini.get_int("lag", "n_lag", c.lag.n_lag);
  c.lag.d_tau = ini.get_double("lag", "d_tau", 8 * c.sim.dt);

  c.gen.grid = c.grid;
  c.gen.seed = c.seed;
  c.gen.layers_min = ini.get_int("gen", "layers_min", c.gen.layers_min);
  c.gen.layers_max = ini.get_int("gen", "layers_max", c.gen.layers_max);
  c.gen.v_top_min = ini.get_double("gen", "v_top_min", c.gen.v_top_min);
  c.gen.v_top_max = ini.get_double("gen", "v_top_max", c.gen.v_top_max);
  c.gen.v_step_min = ini.get_double("gen", "v_step_min", c.gen.v_step_min);
  c.gen.v_step_max = ini.get_double("gen", "v_step_max", c.gen.v_step_max);
  c.gen.v_floor = ini.get_double("gen", "v_floor", c.gen.v_floor);
  c.gen.v_ceil = ini.get_double("gen", "v_ceil", c.gen.v_ceil);
  c.gen.fold_amp_min = ini.get_double("gen", "fold_amp_min", c.gen.fold_amp_min);
  c.gen.fold_amp_max = ini.get_double("gen", "fold_amp_max", c.gen.fold_amp_max);
  c.gen.fold_wavelength_min =
      ini.get_double("gen", "fold_wavelength_min", c.gen.fold_wavelength_min);
  c.gen.fold_wavelength_max =
      ini.get_double("gen", "fold_wavelength_max", c.gen.fold_wavelength_max);
  c.gen.fault_prob = ini.get_double("gen", "fault_prob", c.gen.fault_prob);
  c.gen.fault_max_throw = ini.get_int("gen", "fault_max_throw", c.gen.fault_max_throw);
  c.gen.salt_prob = ini.get_double("gen", "salt_prob", c.gen.salt_prob);
  c.gen.salt_radius_min = ini.get_double("gen", "salt_radius_min", c.gen.salt_radius_min);
  c.gen.salt_radius_max = ini.get_double("gen", "salt_radius_max", c.gen.salt_radius_max);
  c.gen.salt_velocity = ini.get_double("gen", "salt_velocity", c.gen.salt_velocity);
  c.gen.smooth_sigma = ini.get_double("gen", "smooth_sigma", c.gen.smooth_sigma);
  c.n_train = ini.get_int("gen", "n_train", c.n_train);
  c.n_val = ini.get_int("gen", "n_val", c.n_val);

  c.arch.modes_z = ini.get_int("train_op", "modes_z", c.arch.modes_z);
  c.arch.modes_x = ini.get_int("train_op", "modes_x", c.arch.modes_x);
  c.arch.n_lag = ini.get_int("train_op", "n_lag", c.lag.n_lag);
  c.train_op.epochs = ini.get_int("train_op", "epochs", c.train_op.epochs);
  c.train_op.batch = ini.get_int("train_op", "batch", c.train_op.batch);
  c.train_op.lr = ini.get_double("train_op", "lr", c.train_op.lr);
  c.train_op.lr_decay = ini.get_double("train_op", "lr_decay", c.train_op.lr_decay);
  c.train_op.decay_every = ini.get_int("train_op", "decay_every", c.train_op.decay_every);
  c.train_op.checkpoint_every =
      ini.get_int("train_op", "checkpoint_every", c.train_op.checkpoint_every);
  c.train_op.resume_from = ini.get_string("train_op", "resume", "");
  c.op_dir = ini.get_string("train_op", "dir", c.op_dir);
  c.train_op.seed = c.seed;

  c.denoiser_arch.emb_dim = ini.get_int("train_ddpm", "emb_dim", c.denoiser_arch.emb_dim);
  c.train_ddpm.epochs = ini.get_int("train_ddpm", "epochs", c.train_ddpm.epochs);
  c.train_ddpm.batch = ini.get_int("train_ddpm", "batch", c.train_ddpm.batch);
  c.train_ddpm.lr = ini.get_double("train_ddpm", "lr", c.train_ddpm.lr);
  c.train_ddpm.checkpoint_every =
      ini.get_int("train_ddpm", "checkpoint_every", c.train_ddpm.checkpoint_every);
  c.train_ddpm.resume_from = ini.get_string("train_ddpm", "resume", "");
  c.ddpm_steps = ini.get_int("train_ddpm", "steps", c.ddpm_steps);
  c.beta_start = ini.get_double("train_ddpm", "beta_start", c.beta_start);
  c.beta_end = ini.get_double("train_ddpm", "beta_end", c.beta_end);
  c.ddpm_dir = ini.get_string("train_ddpm", "dir", c.ddpm_dir);
  c.train_ddpm.seed = c.seed;

  c.invert.iterations = ini.get_int("invert", "iterations", c.invert.iterations);
  c.invert.lr = ini.get_double("invert", "lr", c.invert.lr);
  c.invert.lr_decay = ini.get_double("invert", "lr_decay", c.invert.lr_decay);
  c.invert.decay_every = ini.get_int("invert", "decay_every", c.invert.decay_every);
  c.invert.diffuse_every = ini.get_int("invert", "diffuse_every", c.invert.diffuse_every);
  c.invert.s_cond = ini.get_int("invert", "s_cond", c.invert.s_cond);
  c.invert.seed = c.seed;
  c.op_checkpoint = ini.get_string("invert", "op_checkpoint", "");
  c.ddpm_checkpoint = ini.get_string("invert", "ddpm_checkpoint", "");
  c.invert_v_mig = ini.get_string("invert", "v_mig", "");
  c.invert_observed = ini.get_string("invert", "observed", "");
  c.patch_overlap = ini.get_double("invert", "patch_overlap", c.patch_overlap);
  c.profile_column = ini.get_int("invert", "profile_column", c.profile_column);

  c.rtm_v_true = ini.get_string("rtm", "v_true", "");
  c.rtm_v_mig = ini.get_string("rtm", "v_mig", "");
  c.rtm_out = ini.get_string("rtm", "out", "");

  c.spectrum_velocity = ini.get_string("spectrum", "velocity", "");
  c.spectrum_out = ini.get_string("spectrum", "out", "");
  c.spectrum_column = ini.get_int("spectrum", "column", c.spectrum_column);

  ini.finish();
  return c;
}

inline AcquisitionGeometry make_geometry(const Grid2D& grid, int n_src, int n_rec, int src_depth,
                                         int rec_depth) {
  if (n_src < 1 || n_rec < 2) throw ConfigError("geometry: need n_src >= 1, n_rec >= 2");
  AcquisitionGeometry geom;
  for (int k = 0; k < n_src; ++k) {
    const int ix = static_cast<int>((k + 0.5) * grid.nx / n_src);
    geom.sources.emplace_back(src_depth, ix);
  }
  for (int k = 0; k < n_rec; ++k) {
    const int ix = static_cast<int>(0.5 + static_cast<double>(k) * (grid.nx - 1) / (n_rec - 1));
    geom.receivers.emplace_back(rec_depth, ix);
  }
  geom.validate(grid);
  return geom;
}

}  // namespace velbuild::cli
