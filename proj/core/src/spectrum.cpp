#include "velbuild/spectrum.hpp"

#include "velbuild/fft.hpp"

namespace velbuild {

namespace {

std::vector<std::complex<double>> column_dft(const VelocityField& field, int x_index) {
  if (x_index < 0 || x_index >= field.grid.nx)
    throw ConfigError("vertical_profile_spectrum: x_index out of range");
  const int nz = field.grid.nz;
  std::vector<double> profile(nz);
  for (int iz = 0; iz < nz; ++iz) profile[iz] = field.at(iz, x_index);
  return fft::forward_real(profile.data(), static_cast<std::size_t>(nz));
}

}  // namespace

ProfileSpectrum vertical_profile_spectrum(const VelocityField& field, int x_index) {
  const int nz = field.grid.nz;
  auto spec = column_dft(field, x_index);
  ProfileSpectrum out;
  const int nk = nz / 2 + 1;
  out.wavenumber.resize(nk);
  out.amplitude.resize(nk);
  for (int k = 0; k < nk; ++k) {
    out.wavenumber[k] = static_cast<double>(k) / (static_cast<double>(nz) * field.grid.dz);
    out.amplitude[k] = std::abs(spec[k]);
  }
  return out;
}

std::pair<double, double> parseval_sides(const VelocityField& field, int x_index) {
  const int nz = field.grid.nz;
  auto spec = column_dft(field, x_index);
  double time_side = 0.0;
  for (int iz = 0; iz < nz; ++iz) {
    const double v = field.at(iz, x_index);
    time_side += v * v;
  }
  double freq_side = 0.0;
  for (const auto& c : spec) freq_side += std::norm(c);
  freq_side /= static_cast<double>(nz);
  return {time_side, freq_side};
}

}  // namespace velbuild
