#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "velbuild/grid.hpp"
#include "velbuild/wavesim.hpp"

namespace velbuild::velgen {

/// Parametric generator of layered velocity models with gentle folding,
/// optional normal faulting, and optional elliptical salt bodies.
struct ModelGenConfig {
  Grid2D grid;

  int layers_min = 4;
  int layers_max = 9;

  // top-layer velocity and per-layer increment, m/s; increments may dip
  // slightly negative so the depth trend is increasing only on average
  double v_top_min = 1500.0;
  double v_top_max = 2100.0;
  double v_step_min = -100.0;
  double v_step_max = 500.0;
  double v_floor = 1500.0;
  double v_ceil = 4500.0;

  // interface folding: one sinusoid per interface, cells
  double fold_amp_min = 0.0;
  double fold_amp_max = 5.0;
  double fold_wavelength_min = 40.0;
  double fold_wavelength_max = 160.0;

  double fault_prob = 0.4;
  int fault_max_throw = 8;  // cells

  double salt_prob = 0.3;
  double salt_radius_min = 10.0;  // lateral semi-axis, cells
  double salt_radius_max = 24.0;
  double salt_velocity = 4500.0;

  // migration-model smoothing, grid points; <= 0 picks 15 * nz / 128
  double smooth_sigma = 0.0;

  std::uint64_t seed = 1234;

  void validate(const NormalizationSpec& norm) const;
  double sigma_or_default() const { return smooth_sigma > 0.0 ? smooth_sigma : 15.0 * grid.nz / 128.0; }
};

struct DatasetSample {
  VelocityField v_true;
  VelocityField v_mig;
  ExtendedImageVolume label;
};

/// Draw one velocity model. Deterministic per (cfg, seed).
VelocityField sample_model(const ModelGenConfig& cfg, std::uint64_t seed);

/// Separable Gaussian blur, kernel truncated at 4 sigma, edge-replicate
/// padding. sigma is in grid points on both axes.
VelocityField gaussian_smooth(const VelocityField& v, double sigma);

struct ManifestRecord {
  int idx = 0;
  std::string v_true_path;  // relative to the manifest directory
  std::string v_mig_path;
  std::string label_path;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  Grid2D grid;
  sim::LagAxis lag;
  NormalizationSpec norm;
  int n_train = 0;
  int n_val = 0;
  std::string generator_note;
  std::vector<int> skipped_indices;     // samples lost to modeling blow-ups
  std::vector<ManifestRecord> records;  // idx < n_train → train split
  std::string base_dir;                 // set on load; not serialized

  std::vector<ManifestRecord> train_records() const;
  std::vector<ManifestRecord> val_records() const;

  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

/// Generate n_train + n_val triplets (v_true, v_mig = smoothed v_true,
/// label = model_and_migrate) under seeds cfg.seed + idx, write them as
/// VELB files under out_dir, and return the manifest (also written to
/// out_dir/manifest.txt). norm.image_scale is set to the 99th percentile
/// of |label| over everything generated.
DatasetManifest build_dataset(const ModelGenConfig& cfg, int n_train, int n_val,
                              const AcquisitionGeometry& geom, const sim::LagAxis& lag,
                              const sim::SimConfig& sim_cfg, const std::string& out_dir,
                              int jobs = 1);

/// Read one triplet back, resolving paths against manifest.base_dir.
DatasetSample load_sample(const DatasetManifest& manifest, const ManifestRecord& rec);

}  // namespace velbuild::velgen
