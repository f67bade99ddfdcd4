#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "velbuild/grid.hpp"

namespace velbuild::io {

// VELB container: 32-byte header + little-endian f32 row-major payload.
//   bytes  0..3   magic "VELB"
//   bytes  4..5   version (u16, currently 1)
//   bytes  6..7   rank    (u16, 1..4)
//   bytes  8..23  dims    (4 x u32; trailing dims 1)
//   bytes 24..25  dtype   (u16, 1 = f32)
//   bytes 26..31  reserved, zero
// Spatial metadata (dz, dx, d_tau) travels in configs and manifests, not here.

inline constexpr std::uint16_t kVelbVersion = 1;
inline constexpr std::uint16_t kVelbDtypeF32 = 1;

struct VelbArray {
  std::uint16_t rank = 0;
  std::array<std::uint32_t, 4> dims{1, 1, 1, 1};
  std::vector<float> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (int i = 0; i < rank; ++i) n *= dims[i];
    return n;
  }
};

/// Write a raw array. Throws IoError on failure; rejects non-finite payloads.
void write_velb(const std::filesystem::path& path, const VelbArray& array);

/// Read a raw array. Distinct IoError kinds for bad magic, truncation,
/// malformed headers and NaN payloads.
VelbArray read_velb(const std::filesystem::path& path);

void write_grid(const std::filesystem::path& path, const VelocityField& field);
void write_grid(const std::filesystem::path& path, const ExtendedImageVolume& volume);
void write_gather(const std::filesystem::path& path, const ShotGather& gather);

using GridVariant = std::variant<VelocityField, ExtendedImageVolume>;

/// Read a velocity field (rank 2) or image volume (rank 3). The file does not
/// carry spacings, so grid.dz/dx and d_tau are filled from the arguments.
GridVariant read_grid(const std::filesystem::path& path, double dz = 1.0, double dx = 1.0,
                      double d_tau = 1.0);

VelocityField read_velocity(const std::filesystem::path& path, double dz = 1.0, double dx = 1.0);
ExtendedImageVolume read_image(const std::filesystem::path& path, double dz = 1.0,
                               double dx = 1.0, double d_tau = 1.0);

/// Minimal CSV writer; one header line then one line per row.
void write_csv(const std::filesystem::path& path, const std::string& header,
               const std::vector<std::vector<double>>& rows);

}  // namespace velbuild::io
