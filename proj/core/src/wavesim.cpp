#include "velbuild/wavesim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>
#include <thread>

namespace velbuild::sim {

namespace {

constexpr double kCflFactor = 0.5;
constexpr double kMinPointsPerWavelength = 5.0;

// Extended-grid propagation workspace shared by modeling and migration.
struct Propagator {
  int nz, nx;        // interior
  int halo;
  int enz, enx;      // extended
  double dz, dx;
  std::vector<float> vel2dt2;   // (v*dt)^2 on the extended grid
  std::vector<float> sponge;    // per-cell damping factor
  std::vector<float> p0, p1, p2;

  Propagator(const VelocityField& v, const SimConfig& cfg)
      : nz(v.grid.nz), nx(v.grid.nx), halo(cfg.halo),
        enz(nz + 2 * cfg.halo), enx(nx + 2 * cfg.halo),
        dz(v.grid.dz), dx(v.grid.dx) {
    const std::size_t n = static_cast<std::size_t>(enz) * enx;
    vel2dt2.resize(n);
    sponge.assign(n, 1.0f);
    p0.assign(n, 0.0f);
    p1.assign(n, 0.0f);
    p2.assign(n, 0.0f);

    // velocity extended by edge replication
    for (int iz = 0; iz < enz; ++iz) {
      const int src_z = std::clamp(iz - halo, 0, nz - 1);
      for (int ix = 0; ix < enx; ++ix) {
        const int src_x = std::clamp(ix - halo, 0, nx - 1);
        const double vv = v.at(src_z, src_x) * cfg.dt;
        vel2dt2[idx(iz, ix)] = static_cast<float>(vv * vv);
      }
    }
    // Cerjan profile: exp(-(strength*d)^2) at depth d into the sponge
    for (int iz = 0; iz < enz; ++iz) {
      for (int ix = 0; ix < enx; ++ix) {
        const int dz_out = std::max({halo - iz, iz - (halo + nz - 1), 0});
        const int dx_out = std::max({halo - ix, ix - (halo + nx - 1), 0});
        const int d = std::max(dz_out, dx_out);
        if (d > 0) {
          const double a = cfg.taper_strength * d;
          sponge[idx(iz, ix)] = static_cast<float>(std::exp(-a * a));
        }
      }
    }
  }

  std::size_t idx(int iz, int ix) const { return static_cast<std::size_t>(iz) * enx + ix; }
  std::size_t interior_idx(int iz, int ix) const { return idx(iz + halo, ix + halo); }

  // One leapfrog step: p2 = 2 p1 - p0 + (v dt)^2 lap4(p1), then sponge.
  void step() {
    const float c1z = static_cast<float>(4.0 / 3.0 / (dz * dz));
    const float c2z = static_cast<float>(-1.0 / 12.0 / (dz * dz));
    const float c1x = static_cast<float>(4.0 / 3.0 / (dx * dx));
    const float c2x = static_cast<float>(-1.0 / 12.0 / (dx * dx));
    const float c0 = static_cast<float>(-2.5 / (dz * dz) - 2.5 / (dx * dx));

    for (int iz = 2; iz < enz - 2; ++iz) {
      const float* up2 = &p1[idx(iz - 2, 0)];
      const float* up1 = &p1[idx(iz - 1, 0)];
      const float* mid = &p1[idx(iz, 0)];
      const float* dn1 = &p1[idx(iz + 1, 0)];
      const float* dn2 = &p1[idx(iz + 2, 0)];
      const float* prev = &p0[idx(iz, 0)];
      const float* v2 = &vel2dt2[idx(iz, 0)];
      float* out = &p2[idx(iz, 0)];
      for (int ix = 2; ix < enx - 2; ++ix) {
        const float lap = c0 * mid[ix]
                        + c1z * (up1[ix] + dn1[ix]) + c2z * (up2[ix] + dn2[ix])
                        + c1x * (mid[ix - 1] + mid[ix + 1]) + c2x * (mid[ix - 2] + mid[ix + 2]);
        out[ix] = 2.0f * mid[ix] - prev[ix] + v2[ix] * lap;
      }
    }
    // damp both time levels inside the sponge
    const std::size_t n = p1.size();
    for (std::size_t i = 0; i < n; ++i) {
      p2[i] *= sponge[i];
      p1[i] *= sponge[i];
    }
    std::swap(p0, p1);
    std::swap(p1, p2);
  }

  void inject(int iz_int, int ix_int, float amplitude) {
    const std::size_t i = interior_idx(iz_int, ix_int);
    p1[i] += vel2dt2[i] * amplitude;
  }

  double interior_energy() const {
    double e = 0.0;
    for (int iz = 0; iz < nz; ++iz) {
      const float* row = &p1[interior_idx(iz, 0)];
      for (int ix = 0; ix < nx; ++ix) e += static_cast<double>(row[ix]) * row[ix];
    }
    return e;
  }

  void check_finite(int step_index) const {
    // probe the interior center; blow-ups reach it within a few steps
    const float c = p1[interior_idx(nz / 2, nx / 2)];
    const float e = p1[interior_idx(nz / 4, nx / 4)];
    if (!std::isfinite(c) || !std::isfinite(e)) {
      std::ostringstream msg;
      msg << "wave propagation blow-up at step " << step_index;
      throw NumericError(msg.str());
    }
  }
};

}  // namespace

void SimConfig::validate(const Grid2D& grid, float v_min_field, float v_max_field) const {
  grid.validate();
  if (nt <= 0 || dt <= 0.0) throw ConfigError("SimConfig: nt and dt must be positive");
  if (halo < 10) throw ConfigError("SimConfig: halo must be >= 10 cells");
  if (f_peak <= 0.0) throw ConfigError("SimConfig: f_peak must be > 0");
  const double h_min = std::min(grid.dz, grid.dx);
  const double dt_max = kCflFactor * h_min / static_cast<double>(v_max_field);
  if (dt > dt_max) {
    std::ostringstream msg;
    msg << "SimConfig: CFL violated: dt=" << dt << " exceeds " << kCflFactor << "*min(dz,dx)/v_max="
        << dt_max;
    throw NumericError(msg.str());
  }
  const double h_max = std::max(grid.dz, grid.dx);
  const double ppw = static_cast<double>(v_min_field) / (f_peak * h_max);
  if (ppw < kMinPointsPerWavelength) {
    std::ostringstream msg;
    msg << "SimConfig: dispersion bound violated: " << ppw
        << " points per wavelength at f_peak, need >= " << kMinPointsPerWavelength;
    throw NumericError(msg.str());
  }
}

void LagAxis::validate(double dt) const {
  if (n_lag < 1 || n_lag % 2 == 0) throw ConfigError("LagAxis: n_lag must be odd and >= 1");
  if (d_tau <= 0.0) throw ConfigError("LagAxis: d_tau must be > 0");
  const double steps = d_tau / dt;
  if (std::abs(steps - std::round(steps)) > 1e-6 * steps || std::round(steps) < 1.0)
    throw ConfigError("LagAxis: d_tau must be a positive integer multiple of dt");
}

int LagAxis::step_of(double dt) const { return static_cast<int>(std::round(d_tau / dt)); }

std::vector<double> ricker_wavelet(double f_peak, int nt, double dt) {
  if (f_peak <= 0.0) throw ConfigError("ricker_wavelet: f_peak must be > 0");
  const double t0 = 1.5 / f_peak;
  if (nt * dt < 2.0 * t0) throw ConfigError("ricker_wavelet: wavelet truncated (nt*dt < 2*t0)");
  std::vector<double> w(nt);
  const double pf2 = std::numbers::pi * std::numbers::pi * f_peak * f_peak;
  for (int it = 0; it < nt; ++it) {
    const double u = it * dt - t0;
    w[it] = (1.0 - 2.0 * pf2 * u * u) * std::exp(-pf2 * u * u);
  }
  return w;
}

SimResult simulate_shot(const VelocityField& v, const AcquisitionGeometry& geom,
                        int source_index, const SimConfig& cfg, const LagAxis& lag,
                        bool store_snapshots) {
  cfg.validate(v.grid, v.min_value(), v.max_value());
  geom.validate(v.grid);
  lag.validate(cfg.dt);
  if (source_index < 0 || source_index >= static_cast<int>(geom.sources.size()))
    throw ConfigError("simulate_shot: source index out of range");

  const auto wavelet = ricker_wavelet(cfg.f_peak, cfg.nt, cfg.dt);
  const auto [src_z, src_x] = geom.sources[source_index];
  const int n_rec = static_cast<int>(geom.receivers.size());
  const int dec = lag.step_of(cfg.dt);

  Propagator prop(v, cfg);
  SimResult result;
  result.gather = ShotGather(cfg.nt, cfg.dt, n_rec);
  result.interior_energy.resize(cfg.nt);
  if (store_snapshots) {
    result.snapshots.decimation = dec;
    result.snapshots.nz = v.grid.nz;
    result.snapshots.nx = v.grid.nx;
    result.snapshots.frames.reserve(static_cast<std::size_t>(cfg.nt / dec) + 1);
  }

  for (int it = 0; it < cfg.nt; ++it) {
    // record the field at t = it*dt
    for (int ir = 0; ir < n_rec; ++ir) {
      const auto [rz, rx] = geom.receivers[ir];
      result.gather.at(ir, it) = prop.p1[prop.interior_idx(rz, rx)];
    }
    if (store_snapshots && it % dec == 0) {
      std::vector<float> frame(static_cast<std::size_t>(v.grid.nz) * v.grid.nx);
      for (int iz = 0; iz < v.grid.nz; ++iz) {
        const float* row = &prop.p1[prop.interior_idx(iz, 0)];
        std::copy(row, row + v.grid.nx, frame.begin() + static_cast<std::size_t>(iz) * v.grid.nx);
      }
      result.snapshots.frames.push_back(std::move(frame));
    }
    result.interior_energy[it] = prop.interior_energy();

    prop.step();
    prop.inject(src_z, src_x, static_cast<float>(wavelet[it]));
    if (it % 50 == 0) prop.check_finite(it);
  }
  return result;
}

ExtendedImageVolume migrate_shot(const VelocityField& v_mig, const ShotGather& gather,
                                 const AcquisitionGeometry& geom,
                                 const WaveSnapshots& source_snaps, const LagAxis& lag,
                                 const SimConfig& cfg) {
  cfg.validate(v_mig.grid, v_mig.min_value(), v_mig.max_value());
  geom.validate(v_mig.grid);
  lag.validate(cfg.dt);
  if (gather.n_rec != static_cast<int>(geom.receivers.size()))
    throw ConfigError("migrate_shot: gather/geometry receiver count mismatch");
  if (std::abs(gather.dt - cfg.dt) > 1e-12)
    throw ConfigError("migrate_shot: gather dt differs from config dt");
  if (gather.nt != cfg.nt) throw ConfigError("migrate_shot: gather nt differs from config nt");
  const int dec = lag.step_of(cfg.dt);
  if (source_snaps.decimation != dec ||
      source_snaps.nz != v_mig.grid.nz || source_snaps.nx != v_mig.grid.nx)
    throw ConfigError("migrate_shot: snapshot axes incompatible with lag/grid");

  const int nz = v_mig.grid.nz, nx = v_mig.grid.nx;
  const int n_rec = gather.n_rec;
  const int shift = lag.max_shift();
  const std::size_t cells = static_cast<std::size_t>(nz) * nx;

  Propagator prop(v_mig, cfg);
  // f64 accumulators keep the stack insensitive to accumulation order
  std::vector<std::vector<double>> accum(lag.n_lag, std::vector<double>(cells, 0.0));
  std::vector<float> recv_frame(cells);

  // reverse-time receiver propagation; after the step for jt, p1 holds the
  // backward field at t = jt*dt
  for (int jt = cfg.nt - 1; jt >= 0; --jt) {
    prop.step();
    for (int ir = 0; ir < n_rec; ++ir) {
      const auto [rz, rx] = geom.receivers[ir];
      const std::size_t i = prop.interior_idx(rz, rx);
      prop.p1[i] += prop.vel2dt2[i] * gather.at(ir, jt);
    }
    if (jt % 50 == 0) prop.check_finite(jt);

    if (jt % dec != 0) continue;
    for (int iz = 0; iz < nz; ++iz) {
      const float* row = &prop.p1[prop.interior_idx(iz, 0)];
      std::copy(row, row + nx, recv_frame.begin() + static_cast<std::size_t>(iz) * nx);
    }
    // R(r, l) += p+(jt + 2 l dec) * p-(jt); out-of-range shifts contribute zero
    for (int l = -shift; l <= shift; ++l) {
      const int sidx = jt + 2 * l * dec;
      if (sidx < 0 || sidx >= cfg.nt) continue;
      const std::size_t frame_no = static_cast<std::size_t>(sidx / dec);
      if (frame_no >= source_snaps.frames.size()) continue;
      const std::vector<float>& src = source_snaps.frames[frame_no];
      std::vector<double>& out = accum[l + shift];
      const double w = dec * cfg.dt;
      for (std::size_t i = 0; i < cells; ++i)
        out[i] += w * static_cast<double>(src[i]) * recv_frame[i];
    }
  }

  ExtendedImageVolume image(v_mig.grid, lag.n_lag, lag.d_tau);
  for (int l = 0; l < lag.n_lag; ++l)
    for (std::size_t i = 0; i < cells; ++i)
      image.values[static_cast<std::size_t>(l) * cells + i] = static_cast<float>(accum[l][i]);
  return image;
}

ExtendedImageVolume model_and_migrate(const VelocityField& v_true, const VelocityField& v_mig,
                                      const AcquisitionGeometry& geom, const LagAxis& lag,
                                      const SimConfig& cfg, int jobs) {
  if (!v_true.grid.same_shape(v_mig.grid))
    throw ConfigError("model_and_migrate: velocity grids differ");
  const int n_src = static_cast<int>(geom.sources.size());
  std::vector<ExtendedImageVolume> partial(n_src);

  auto run_shot = [&](int is) {
    SimResult observed = simulate_shot(v_true, geom, is, cfg, lag, false);
    SimResult source_side = simulate_shot(v_mig, geom, is, cfg, lag, true);
    partial[is] = migrate_shot(v_mig, observed.gather, geom, source_side.snapshots, lag, cfg);
  };

  jobs = std::max(1, jobs);
  if (jobs == 1) {
    for (int is = 0; is < n_src; ++is) run_shot(is);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < std::min(jobs, n_src); ++t)
      pool.emplace_back([&] {
        for (int is = next.fetch_add(1); is < n_src; is = next.fetch_add(1)) run_shot(is);
      });
    for (auto& th : pool) th.join();
  }

  // fixed-order stack for reproducibility
  ExtendedImageVolume stack(v_true.grid, lag.n_lag, lag.d_tau);
  for (int is = 0; is < n_src; ++is)
    for (std::size_t i = 0; i < stack.values.size(); ++i)
      stack.values[i] += partial[is].values[i];
  return stack;
}

}  // namespace velbuild::sim
