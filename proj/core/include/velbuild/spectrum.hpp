#pragma once

#include <vector>

#include "velbuild/grid.hpp"

namespace velbuild {

struct ProfileSpectrum {
  std::vector<double> wavenumber;  // cycles per meter, length nz/2 + 1
  std::vector<double> amplitude;   // unnormalized DFT magnitude of the depth profile
};

/// Amplitude spectrum of the vertical profile at column x_index.
/// amplitude[k] = |sum_i v(i, x) e^{-2 pi i k i / nz}|, k = 0 .. nz/2.
ProfileSpectrum vertical_profile_spectrum(const VelocityField& field, int x_index);

/// sum_i p_i^2 and (1/nz) sum_k |X_k|^2 over the full spectrum; used by the
/// Parseval consistency check.
std::pair<double, double> parseval_sides(const VelocityField& field, int x_index);

}  // namespace velbuild
