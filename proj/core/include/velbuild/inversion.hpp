#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "velbuild/ddpm.hpp"
#include "velbuild/grid.hpp"
#include "velbuild/neural_op.hpp"

namespace velbuild::inversion {

struct InversionConfig {
  int iterations = 300;
  double lr = 0.01;  // normalized-velocity units
  double lr_decay = 0.8;
  int decay_every = 100;
  int diffuse_every = 10;  // 0 disables the diffusion step
  int s_cond = 50;
  float v_lo = 0.0f, v_hi = 1.0f;  // box constraint, normalized
  std::uint64_t seed = 0;
  std::string loss_csv;  // written when non-empty: iter,loss,lr,refined
  void validate() const;
};

struct InversionResult {
  VelocityField v_inverted;  // m/s
  std::vector<double> loss;
  std::vector<char> refined;  // refined[i] = 1 when the iterate was replaced after iteration i
};

/// Adam on the true-velocity channel only; the migration channel stays fixed
/// and the iterate is clamped to the box after every step. The operator's
/// parameters are flagged non-differentiable for the duration (values are
/// never touched).
InversionResult invert_no(op::HybridOperatorModel& model, const VelocityField& v_mig,
                          const ExtendedImageVolume& i_obs, const NormalizationSpec& norm,
                          const InversionConfig& cfg);

/// As invert_no, but every diffuse_every iterations the iterate is replaced
/// by its conditioned refinement (and once more after the loop); optimizer
/// moments reset on each replacement. diffuse_every = 0 reproduces invert_no
/// exactly.
InversionResult invert_no_ddpm(op::HybridOperatorModel& model, const ddpm::DenoiserFn& denoiser,
                               const ddpm::NoiseSchedule& sched, const VelocityField& v_mig,
                               const ExtendedImageVolume& i_obs, const NormalizationSpec& norm,
                               const InversionConfig& cfg);

struct AblationReport {
  std::vector<double> wavenumber;
  std::vector<double> initial, zero_lag, time_lag;  // profile amplitudes
  VelocityField v_zero, v_time;
  std::vector<double> loss_zero, loss_time;
};

/// Inverts the same observation twice — once with the full lag axis, once
/// with only the tau = 0 panel through a single-lag operator — and compares
/// vertical-profile spectra at column x_index. csv_path, when non-empty,
/// receives wavenumber,initial,zero_lag,time_lag rows.
AblationReport zero_lag_ablation(op::HybridOperatorModel& model_time,
                                 op::HybridOperatorModel& model_zero, const VelocityField& v_mig,
                                 const ExtendedImageVolume& i_obs, const NormalizationSpec& norm,
                                 const InversionConfig& cfg, int x_index,
                                 const std::string& csv_path);

struct Patch {
  int z0 = 0, x0 = 0;
};

/// Overlapping cover of a larger grid by training-sized patches, with
/// per-patch blend weights that sum to one at every pixel.
struct PatchPlan {
  Grid2D big;
  int pnz = 0, pnx = 0;
  std::vector<Patch> patches;
  std::vector<std::vector<float>> weights;  // one [pnz*pnx] map per patch
  void validate() const;
};

/// Cosine-tapered overlapping tiling. overlap is the requested fraction of
/// the patch shared with each neighbor; the last row/column of patches snaps
/// to the grid edge. Weights are renormalized pixelwise, so the partition of
/// unity holds exactly regardless of the snap.
PatchPlan make_patch_plan(const Grid2D& big, int pnz, int pnx, double overlap);

/// Per-patch inversion blended with the plan weights. denoiser may be null
/// (plain operator-only inversion). Patch p runs with seed cfg.seed + p;
/// patches may run concurrently (jobs > 1), blending is ordered.
VelocityField patch_invert(op::HybridOperatorModel& model, const ddpm::DenoiserModel* denoiser,
                           const ddpm::NoiseSchedule* sched, const VelocityField& v_mig,
                           const ExtendedImageVolume& i_obs, const PatchPlan& plan,
                           const NormalizationSpec& norm, const InversionConfig& cfg,
                           int jobs = 1);

}  // namespace velbuild::inversion
