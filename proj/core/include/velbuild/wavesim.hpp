#pragma once

#include <vector>

#include "velbuild/grid.hpp"

namespace velbuild::sim {

/// Discretization of the 2D acoustic modeling runs: second order in time,
/// fourth order in space, Cerjan-style exponential sponge in a halo that
/// pads all four sides of the interior grid.
struct SimConfig {
  int nt = 0;
  double dt = 0.0;            // s
  double f_peak = 15.0;       // Hz, source wavelet peak frequency
  int halo = 20;              // absorbing boundary width, cells
  double taper_strength = 0.015;

  /// CFL and dispersion guards, checked against an actual velocity field.
  /// cfl: dt <= 0.5 * min(dz,dx) / max(v); dispersion: >= 5 points per
  /// wavelength at f_peak for the slowest velocity.
  void validate(const Grid2D& grid, float v_min_field, float v_max_field) const;
};

/// Discrete time-lag axis. d_tau must be an integer multiple of dt.
struct LagAxis {
  int n_lag = 3;
  double d_tau = 0.0;  // s

  void validate(double dt) const;
  /// Lag spacing in time steps.
  int step_of(double dt) const;
  int max_shift() const { return (n_lag - 1) / 2; }
};

/// Ricker wavelet sampled at nt points:
///   w(t) = (1 - 2 pi^2 f^2 (t-t0)^2) exp(-pi^2 f^2 (t-t0)^2), t0 = 1.5/f.
std::vector<double> ricker_wavelet(double f_peak, int nt, double dt);

/// Interior-field snapshots at a fixed step decimation, used as the source
/// wavefield term of the lag correlation.
struct WaveSnapshots {
  int decimation = 1;          // steps between stored frames
  int nz = 0, nx = 0;          // interior dims
  std::vector<std::vector<float>> frames;  // frames[k] = field at step k*decimation
};

struct SimResult {
  ShotGather gather;
  WaveSnapshots snapshots;            // empty unless requested
  std::vector<double> interior_energy;  // sum of p^2 over the interior, per step
};

/// Forward-model one shot. Records the pressure field at every receiver each
/// step; optionally stores interior snapshots at the lag-compatible
/// decimation (d_tau / dt steps).
SimResult simulate_shot(const VelocityField& v, const AcquisitionGeometry& geom,
                        int source_index, const SimConfig& cfg, const LagAxis& lag,
                        bool store_snapshots);

/// Back-propagate a gather through v_mig and accumulate the time-shift
/// correlation against source snapshots (which the caller produced with the
/// same v_mig):  R(r, tau) = sum_t p+(r, t + tau) p-(r, t - tau) dt.
ExtendedImageVolume migrate_shot(const VelocityField& v_mig, const ShotGather& gather,
                                 const AcquisitionGeometry& geom,
                                 const WaveSnapshots& source_snaps, const LagAxis& lag,
                                 const SimConfig& cfg);

/// Model with v_true, migrate with v_mig, stack over all sources.
/// Deterministic: shots may run concurrently but are summed in source order.
ExtendedImageVolume model_and_migrate(const VelocityField& v_true, const VelocityField& v_mig,
                                      const AcquisitionGeometry& geom, const LagAxis& lag,
                                      const SimConfig& cfg, int jobs = 1);

}  // namespace velbuild::sim
