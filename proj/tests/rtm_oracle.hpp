#pragma once

// Self-contained zero-lag RTM reference, written against the documented
// scheme (2nd-order leapfrog, 4th-order space, Cerjan sponge, scaled point
// injection) but sharing no code with the library. Used to cross-check the
// extended-imaging zero-lag slice.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "velbuild/grid.hpp"
#include "velbuild/wavesim.hpp"

namespace rtm_oracle {

struct Field {
  int nz, nx, halo, enz, enx;
  double dz, dx;
  std::vector<float> v2t2, damp, prev, cur, next;

  Field(const velbuild::VelocityField& v, const velbuild::sim::SimConfig& cfg)
      : nz(v.grid.nz), nx(v.grid.nx), halo(cfg.halo),
        enz(nz + 2 * cfg.halo), enx(nx + 2 * cfg.halo), dz(v.grid.dz), dx(v.grid.dx) {
    const std::size_t n = static_cast<std::size_t>(enz) * enx;
    v2t2.resize(n);
    damp.assign(n, 1.0f);
    prev.assign(n, 0.0f);
    cur.assign(n, 0.0f);
    next.assign(n, 0.0f);
    for (int iz = 0; iz < enz; ++iz)
      for (int ix = 0; ix < enx; ++ix) {
        const int sz = std::clamp(iz - halo, 0, nz - 1);
        const int sx = std::clamp(ix - halo, 0, nx - 1);
        const double vd = v.at(sz, sx) * cfg.dt;
        v2t2[at(iz, ix)] = static_cast<float>(vd * vd);
        const int outside = std::max({halo - iz, iz - (halo + nz - 1), halo - ix,
                                      ix - (halo + nx - 1), 0});
        if (outside > 0) {
          const double a = cfg.taper_strength * outside;
          damp[at(iz, ix)] = static_cast<float>(std::exp(-a * a));
        }
      }
  }

  std::size_t at(int iz, int ix) const { return static_cast<std::size_t>(iz) * enx + ix; }
  std::size_t in(int iz, int ix) const { return at(iz + halo, ix + halo); }

  void advance() {
    const float c1z = static_cast<float>(4.0 / 3.0 / (dz * dz));
    const float c2z = static_cast<float>(-1.0 / 12.0 / (dz * dz));
    const float c1x = static_cast<float>(4.0 / 3.0 / (dx * dx));
    const float c2x = static_cast<float>(-1.0 / 12.0 / (dx * dx));
    const float c0 = static_cast<float>(-2.5 / (dz * dz) - 2.5 / (dx * dx));
    for (int iz = 2; iz < enz - 2; ++iz)
      for (int ix = 2; ix < enx - 2; ++ix) {
        const float lap = c0 * cur[at(iz, ix)]
                        + c1z * (cur[at(iz - 1, ix)] + cur[at(iz + 1, ix)])
                        + c2z * (cur[at(iz - 2, ix)] + cur[at(iz + 2, ix)])
                        + c1x * (cur[at(iz, ix - 1)] + cur[at(iz, ix + 1)])
                        + c2x * (cur[at(iz, ix - 2)] + cur[at(iz, ix + 2)]);
        next[at(iz, ix)] = 2.0f * cur[at(iz, ix)] - prev[at(iz, ix)] + v2t2[at(iz, ix)] * lap;
      }
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] *= damp[i];
      cur[i] *= damp[i];
    }
    std::swap(prev, cur);
    std::swap(cur, next);
  }

  std::vector<float> interior() const {
    std::vector<float> out(static_cast<std::size_t>(nz) * nx);
    for (int iz = 0; iz < nz; ++iz)
      for (int ix = 0; ix < nx; ++ix) out[static_cast<std::size_t>(iz) * nx + ix] = cur[in(iz, ix)];
    return out;
  }
};

inline std::vector<double> source_wavelet(double f_peak, int nt, double dt) {
  std::vector<double> w(nt);
  const double t0 = 1.5 / f_peak;
  const double a = std::numbers::pi * std::numbers::pi * f_peak * f_peak;
  for (int it = 0; it < nt; ++it) {
    const double u = it * dt - t0;
    w[it] = (1.0 - 2.0 * a * u * u) * std::exp(-a * u * u);
  }
  return w;
}

/// Source wavefield frames at the given decimation (field at t = k*dec*dt).
inline std::vector<std::vector<float>> forward_frames(const velbuild::VelocityField& v,
                                                      int src_z, int src_x,
                                                      const velbuild::sim::SimConfig& cfg,
                                                      int dec) {
  Field f(v, cfg);
  const auto w = source_wavelet(cfg.f_peak, cfg.nt, cfg.dt);
  std::vector<std::vector<float>> frames;
  for (int it = 0; it < cfg.nt; ++it) {
    if (it % dec == 0) frames.push_back(f.interior());
    f.advance();
    f.cur[f.in(src_z, src_x)] += f.v2t2[f.in(src_z, src_x)] * static_cast<float>(w[it]);
  }
  return frames;
}

/// Receiver wavefield frames, indexed so frames[k] is the backward field at
/// t = k*dec*dt.
inline std::vector<std::vector<float>> backward_frames(
    const velbuild::VelocityField& v_mig, const velbuild::ShotGather& gather,
    const velbuild::AcquisitionGeometry& geom, const velbuild::sim::SimConfig& cfg, int dec) {
  Field f(v_mig, cfg);
  std::vector<std::vector<float>> frames((cfg.nt - 1) / dec + 1);
  for (int jt = cfg.nt - 1; jt >= 0; --jt) {
    f.advance();
    for (std::size_t ir = 0; ir < geom.receivers.size(); ++ir) {
      const auto [rz, rx] = geom.receivers[ir];
      f.cur[f.in(rz, rx)] += f.v2t2[f.in(rz, rx)] * gather.at(static_cast<int>(ir), jt);
    }
    if (jt % dec == 0) frames[jt / dec] = f.interior();
  }
  return frames;
}

/// Conventional zero-lag image for one shot: sum over stored frame times of
/// p_src * p_rcv, weighted by the frame spacing.
inline std::vector<double> zero_lag_image(const velbuild::VelocityField& v_mig,
                                          const velbuild::ShotGather& gather,
                                          const velbuild::AcquisitionGeometry& geom,
                                          int src_z, int src_x,
                                          const velbuild::sim::SimConfig& cfg, int dec) {
  const auto fwd = forward_frames(v_mig, src_z, src_x, cfg, dec);
  const auto bwd = backward_frames(v_mig, gather, geom, cfg, dec);
  const std::size_t cells = static_cast<std::size_t>(v_mig.grid.nz) * v_mig.grid.nx;
  std::vector<double> image(cells, 0.0);
  const double w = dec * cfg.dt;
  const std::size_t n_frames = std::min(fwd.size(), bwd.size());
  for (std::size_t k = 0; k < n_frames; ++k)
    for (std::size_t i = 0; i < cells; ++i)
      image[i] += w * static_cast<double>(fwd[k][i]) * bwd[k][i];
  return image;
}

}  // namespace rtm_oracle
