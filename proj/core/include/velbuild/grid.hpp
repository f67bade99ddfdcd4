#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "velbuild/error.hpp"

namespace velbuild {

/// Regular 2D mesh. Depth axis (z) is the slow/row axis, lateral axis (x)
/// the fast/column axis; arrays over the grid are row-major [nz][nx].
struct Grid2D {
  int nz = 0;
  int nx = 0;
  double dz = 0.0;  // m
  double dx = 0.0;  // m

  void validate() const {
    if (nz < 8 || nx < 8) throw ConfigError("Grid2D: nz and nx must be >= 8");
    if (dz <= 0.0 || dx <= 0.0) throw ConfigError("Grid2D: dz and dx must be > 0");
  }
  std::size_t cells() const { return static_cast<std::size_t>(nz) * nx; }
  bool same_shape(const Grid2D& o) const { return nz == o.nz && nx == o.nx; }
};

/// P-wave velocity on a Grid2D, in m/s.
struct VelocityField {
  Grid2D grid;
  std::vector<float> values;  // [nz * nx]

  VelocityField() = default;
  VelocityField(Grid2D g, float fill) : grid(g), values(g.cells(), fill) {}
  VelocityField(Grid2D g, std::vector<float> v) : grid(g), values(std::move(v)) {}

  float& at(int iz, int ix) { return values[static_cast<std::size_t>(iz) * grid.nx + ix]; }
  float at(int iz, int ix) const { return values[static_cast<std::size_t>(iz) * grid.nx + ix]; }

  float min_value() const { return *std::min_element(values.begin(), values.end()); }
  float max_value() const { return *std::max_element(values.begin(), values.end()); }

  void validate(float v_min, float v_max) const {
    if (values.size() != grid.cells()) throw ConfigError("VelocityField: size/grid mismatch");
    for (float v : values) {
      if (!std::isfinite(v)) throw NumericError("VelocityField: non-finite value");
      if (v < v_min || v > v_max) throw ConfigError("VelocityField: value outside declared bounds");
    }
  }
};

/// Stack of time-lag migrated images R(r, tau) over discrete lags.
/// Lag index (n_lag-1)/2 is tau = 0; n_lag is odd so lags are symmetric.
struct ExtendedImageVolume {
  Grid2D grid;
  int n_lag = 0;
  double d_tau = 0.0;  // s
  std::vector<float> values;  // [n_lag * nz * nx]

  ExtendedImageVolume() = default;
  ExtendedImageVolume(Grid2D g, int lags, double dtau)
      : grid(g), n_lag(lags), d_tau(dtau), values(g.cells() * lags, 0.0f) {
    if (lags < 1 || lags % 2 == 0) throw ConfigError("ExtendedImageVolume: n_lag must be odd and >= 1");
  }

  int zero_lag_index() const { return (n_lag - 1) / 2; }
  std::size_t panel_size() const { return grid.cells(); }

  float& at(int lag, int iz, int ix) {
    return values[(static_cast<std::size_t>(lag) * grid.nz + iz) * grid.nx + ix];
  }
  float at(int lag, int iz, int ix) const {
    return values[(static_cast<std::size_t>(lag) * grid.nz + iz) * grid.nx + ix];
  }

  /// Copy of one lag panel as a flat [nz*nx] array.
  std::vector<float> panel(int lag) const {
    auto first = values.begin() + static_cast<std::ptrdiff_t>(lag) * panel_size();
    return std::vector<float>(first, first + panel_size());
  }
};

/// Centered lag slice, e.g. n_lag = 1 keeps just the tau = 0 panel.
inline ExtendedImageVolume central_lags(const ExtendedImageVolume& img, int n_lag) {
  if (n_lag > img.n_lag || n_lag < 1 || n_lag % 2 == 0)
    throw ConfigError("central_lags: need odd n_lag <= source lag count");
  ExtendedImageVolume out(img.grid, n_lag, img.d_tau);
  const int first = img.zero_lag_index() - (n_lag - 1) / 2;
  for (int l = 0; l < n_lag; ++l) {
    const auto panel = img.panel(first + l);
    std::copy(panel.begin(), panel.end(),
              out.values.begin() + static_cast<std::ptrdiff_t>(l) * out.panel_size());
  }
  return out;
}

/// Recorded traces for one shot: [n_rec][nt], row per receiver.
struct ShotGather {
  int nt = 0;
  double dt = 0.0;  // s
  int n_rec = 0;
  std::vector<float> traces;  // [n_rec * nt]

  ShotGather() = default;
  ShotGather(int nt_, double dt_, int n_rec_)
      : nt(nt_), dt(dt_), n_rec(n_rec_), traces(static_cast<std::size_t>(nt_) * n_rec_, 0.0f) {
    if (dt_ <= 0.0) throw ConfigError("ShotGather: dt must be > 0");
  }
  float& at(int rec, int it) { return traces[static_cast<std::size_t>(rec) * nt + it]; }
  float at(int rec, int it) const { return traces[static_cast<std::size_t>(rec) * nt + it]; }
};

/// Source/receiver placement in interior grid coordinates (iz, ix).
/// The absorbing halo lives outside the grid, so any in-grid position is valid.
struct AcquisitionGeometry {
  std::vector<std::pair<int, int>> sources;    // (iz, ix)
  std::vector<std::pair<int, int>> receivers;  // (iz, ix)

  void validate(const Grid2D& g) const {
    if (sources.empty()) throw ConfigError("AcquisitionGeometry: need at least 1 source");
    if (receivers.size() < 2) throw ConfigError("AcquisitionGeometry: need at least 2 receivers");
    auto inside = [&](const std::pair<int, int>& p) {
      return p.first >= 0 && p.first < g.nz && p.second >= 0 && p.second < g.nx;
    };
    for (const auto& s : sources)
      if (!inside(s)) throw ConfigError("AcquisitionGeometry: source outside grid");
    for (const auto& r : receivers)
      if (!inside(r)) throw ConfigError("AcquisitionGeometry: receiver outside grid");
  }

  /// Evenly spaced surface deployment at the given depth row.
  static AcquisitionGeometry surface_even(const Grid2D& g, int n_src, int n_rec, int depth = 2);
};

/// Velocity bounds and image amplitude scale used to map fields to the
/// unit ranges the networks train on.
struct NormalizationSpec {
  float v_min = 1450.0f;
  float v_max = 4800.0f;
  float image_scale = 1.0f;

  void validate() const {
    if (!(v_max > v_min)) throw ConfigError("NormalizationSpec: v_max must exceed v_min");
    if (!(image_scale > 0.0f)) throw ConfigError("NormalizationSpec: image_scale must be > 0");
  }
};

/// (v - v_min) / (v_max - v_min), clamped to [0, 1].
std::vector<float> normalize_velocity(const VelocityField& v, const NormalizationSpec& spec);

/// Inverse of normalize_velocity on in-range values.
VelocityField denormalize_velocity(const Grid2D& grid, const std::vector<float>& unit,
                                   const NormalizationSpec& spec);

inline AcquisitionGeometry AcquisitionGeometry::surface_even(const Grid2D& g, int n_src,
                                                             int n_rec, int depth) {
  AcquisitionGeometry geom;
  auto place = [&](int n, std::vector<std::pair<int, int>>& out) {
    for (int i = 0; i < n; ++i) {
      double f = (n == 1) ? 0.5 : static_cast<double>(i) / (n - 1);
      int ix = static_cast<int>(std::lround(f * (g.nx - 1)));
      out.emplace_back(depth, ix);
    }
  };
  place(n_src, geom.sources);
  place(n_rec, geom.receivers);
  geom.validate(g);
  return geom;
}

// Both directions go through double so the float-to-float round trip lands
// back on the original bits for every in-range velocity.
inline std::vector<float> normalize_velocity(const VelocityField& v, const NormalizationSpec& spec) {
  spec.validate();
  std::vector<float> out(v.values.size());
  const double lo = spec.v_min, span = static_cast<double>(spec.v_max) - spec.v_min;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = (static_cast<double>(v.values[i]) - lo) / span;
    out[i] = static_cast<float>(std::clamp(u, 0.0, 1.0));
  }
  return out;
}

inline VelocityField denormalize_velocity(const Grid2D& grid, const std::vector<float>& unit,
                                          const NormalizationSpec& spec) {
  spec.validate();
  if (unit.size() != grid.cells()) throw ConfigError("denormalize_velocity: size/grid mismatch");
  VelocityField v(grid, 0.0f);
  const double lo = spec.v_min, span = static_cast<double>(spec.v_max) - spec.v_min;
  for (std::size_t i = 0; i < unit.size(); ++i)
    v.values[i] = static_cast<float>(lo + static_cast<double>(unit[i]) * span);
  return v;
}

}  // namespace velbuild
