#include "velbuild/velb_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "VELB I/O assumes a little-endian host");

namespace velbuild::io {

namespace {

constexpr char kMagic[4] = {'V', 'E', 'L', 'B'};
constexpr std::size_t kHeaderBytes = 32;

void put_u16(unsigned char* p, std::uint16_t v) { std::memcpy(p, &v, 2); }
void put_u32(unsigned char* p, std::uint32_t v) { std::memcpy(p, &v, 4); }
std::uint16_t get_u16(const unsigned char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}
std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

}  // namespace

void write_velb(const std::filesystem::path& path, const VelbArray& array) {
  if (array.rank < 1 || array.rank > 4)
    throw IoError(IoError::Kind::bad_header, "write_velb: rank must be 1..4");
  if (array.values.size() != array.element_count())
    throw IoError(IoError::Kind::bad_header, "write_velb: dims/payload size mismatch");
  for (float v : array.values)
    if (!std::isfinite(v))
      throw IoError(IoError::Kind::nan_payload, "write_velb: non-finite payload: " + path.string());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError(IoError::Kind::open_failed, "write_velb: cannot open " + path.string());

  unsigned char header[kHeaderBytes] = {};
  std::memcpy(header, kMagic, 4);
  put_u16(header + 4, kVelbVersion);
  put_u16(header + 6, array.rank);
  for (int i = 0; i < 4; ++i) put_u32(header + 8 + 4 * i, array.dims[i]);
  put_u16(header + 24, kVelbDtypeF32);

  out.write(reinterpret_cast<const char*>(header), kHeaderBytes);
  out.write(reinterpret_cast<const char*>(array.values.data()),
            static_cast<std::streamsize>(array.values.size() * sizeof(float)));
  if (!out)
    throw IoError(IoError::Kind::write_failed, "write_velb: write failed: " + path.string());
}

VelbArray read_velb(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError(IoError::Kind::open_failed, "read_velb: cannot open " + path.string());

  unsigned char header[kHeaderBytes];
  in.read(reinterpret_cast<char*>(header), kHeaderBytes);
  if (in.gcount() != static_cast<std::streamsize>(kHeaderBytes))
    throw IoError(IoError::Kind::truncated, "read_velb: header truncated: " + path.string());
  if (std::memcmp(header, kMagic, 4) != 0)
    throw IoError(IoError::Kind::bad_magic, "read_velb: bad magic: " + path.string());
  if (get_u16(header + 4) != kVelbVersion)
    throw IoError(IoError::Kind::bad_header, "read_velb: unsupported version: " + path.string());

  VelbArray array;
  array.rank = get_u16(header + 6);
  if (array.rank < 1 || array.rank > 4)
    throw IoError(IoError::Kind::bad_header, "read_velb: bad rank: " + path.string());
  for (int i = 0; i < 4; ++i) array.dims[i] = get_u32(header + 8 + 4 * i);
  if (get_u16(header + 24) != kVelbDtypeF32)
    throw IoError(IoError::Kind::bad_header, "read_velb: unsupported dtype: " + path.string());

  const std::size_t n = array.element_count();
  if (n == 0)
    throw IoError(IoError::Kind::bad_header, "read_velb: zero-sized dims: " + path.string());
  array.values.resize(n);
  in.read(reinterpret_cast<char*>(array.values.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
    throw IoError(IoError::Kind::truncated, "read_velb: payload truncated: " + path.string());
  for (float v : array.values)
    if (!std::isfinite(v))
      throw IoError(IoError::Kind::nan_payload, "read_velb: non-finite payload: " + path.string());
  return array;
}

void write_grid(const std::filesystem::path& path, const VelocityField& field) {
  VelbArray a;
  a.rank = 2;
  a.dims = {static_cast<std::uint32_t>(field.grid.nz), static_cast<std::uint32_t>(field.grid.nx),
            1, 1};
  a.values = field.values;
  write_velb(path, a);
}

void write_grid(const std::filesystem::path& path, const ExtendedImageVolume& volume) {
  VelbArray a;
  a.rank = 3;
  a.dims = {static_cast<std::uint32_t>(volume.n_lag), static_cast<std::uint32_t>(volume.grid.nz),
            static_cast<std::uint32_t>(volume.grid.nx), 1};
  a.values = volume.values;
  write_velb(path, a);
}

void write_gather(const std::filesystem::path& path, const ShotGather& gather) {
  VelbArray a;
  a.rank = 2;
  a.dims = {static_cast<std::uint32_t>(gather.n_rec), static_cast<std::uint32_t>(gather.nt), 1, 1};
  a.values = gather.traces;
  write_velb(path, a);
}

GridVariant read_grid(const std::filesystem::path& path, double dz, double dx, double d_tau) {
  VelbArray a = read_velb(path);
  if (a.rank == 2) {
    VelocityField f;
    f.grid = {static_cast<int>(a.dims[0]), static_cast<int>(a.dims[1]), dz, dx};
    f.values = std::move(a.values);
    return f;
  }
  if (a.rank == 3) {
    ExtendedImageVolume v;
    v.grid = {static_cast<int>(a.dims[1]), static_cast<int>(a.dims[2]), dz, dx};
    v.n_lag = static_cast<int>(a.dims[0]);
    v.d_tau = d_tau;
    v.values = std::move(a.values);
    return v;
  }
  throw IoError(IoError::Kind::bad_header, "read_grid: expected rank 2 or 3: " + path.string());
}

VelocityField read_velocity(const std::filesystem::path& path, double dz, double dx) {
  auto g = read_grid(path, dz, dx);
  if (auto* f = std::get_if<VelocityField>(&g)) return std::move(*f);
  throw IoError(IoError::Kind::bad_header, "read_velocity: file is not rank 2: " + path.string());
}

ExtendedImageVolume read_image(const std::filesystem::path& path, double dz, double dx,
                               double d_tau) {
  auto g = read_grid(path, dz, dx, d_tau);
  if (auto* v = std::get_if<ExtendedImageVolume>(&g)) return std::move(*v);
  throw IoError(IoError::Kind::bad_header, "read_image: file is not rank 3: " + path.string());
}

void write_csv(const std::filesystem::path& path, const std::string& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError(IoError::Kind::open_failed, "write_csv: cannot open " + path.string());
  out << header << "\n";
  out.precision(10);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ",";
      out << row[i];
    }
    out << "\n";
  }
  if (!out)
    throw IoError(IoError::Kind::write_failed, "write_csv: write failed: " + path.string());
}

}  // namespace velbuild::io
