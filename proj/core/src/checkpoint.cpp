#include "velbuild/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "VELC I/O assumes a little-endian host");

namespace velbuild::io {

namespace {

constexpr char kMagic[4] = {'V', 'E', 'L', 'C'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 32;

template <typename U>
void put(std::ofstream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::ifstream& in, const std::filesystem::path& path) {
  U v;
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(U)))
    throw IoError(IoError::Kind::truncated, "read_checkpoint: truncated: " + path.string());
  return v;
}

}  // namespace

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError(IoError::Kind::open_failed, "write_checkpoint: cannot open " + path.string());

  unsigned char header[kHeaderBytes] = {};
  std::memcpy(header, kMagic, 4);
  std::memcpy(header + 4, &kVersion, 2);
  const std::uint32_t n = static_cast<std::uint32_t>(ckpt.records.size());
  std::memcpy(header + 8, &n, 4);
  std::memcpy(header + 12, &ckpt.epoch, 4);
  std::memcpy(header + 16, &ckpt.adam_step, 8);
  out.write(reinterpret_cast<const char*>(header), kHeaderBytes);

  for (const auto& rec : ckpt.records) {
    if (rec.name.empty() || rec.name.size() > 0xffff)
      throw IoError(IoError::Kind::bad_header, "write_checkpoint: bad record name");
    if (rec.shape.empty() || rec.shape.size() > 5)
      throw IoError(IoError::Kind::bad_header,
                    "write_checkpoint: record rank must be 1..5: " + rec.name);
    std::size_t count = 1;
    for (int d : rec.shape) count *= static_cast<std::size_t>(d);
    if (count != rec.values.size())
      throw IoError(IoError::Kind::bad_header,
                    "write_checkpoint: dims/payload mismatch: " + rec.name);
    for (float v : rec.values)
      if (!std::isfinite(v))
        throw IoError(IoError::Kind::nan_payload,
                      "write_checkpoint: non-finite payload: " + rec.name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(rec.name.size()));
    out.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(rec.shape.size()));
    for (int i = 0; i < 5; ++i)
      put<std::uint32_t>(out, i < static_cast<int>(rec.shape.size())
                                  ? static_cast<std::uint32_t>(rec.shape[i])
                                  : 1u);
    out.write(reinterpret_cast<const char*>(rec.values.data()),
              static_cast<std::streamsize>(rec.values.size() * sizeof(float)));
  }
  if (!out)
    throw IoError(IoError::Kind::write_failed, "write_checkpoint: write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError(IoError::Kind::open_failed, "read_checkpoint: cannot open " + path.string());

  unsigned char header[kHeaderBytes];
  in.read(reinterpret_cast<char*>(header), kHeaderBytes);
  if (in.gcount() != static_cast<std::streamsize>(kHeaderBytes))
    throw IoError(IoError::Kind::truncated, "read_checkpoint: header truncated: " + path.string());
  if (std::memcmp(header, kMagic, 4) != 0)
    throw IoError(IoError::Kind::bad_magic, "read_checkpoint: bad magic: " + path.string());
  std::uint16_t version;
  std::memcpy(&version, header + 4, 2);
  if (version != kVersion)
    throw IoError(IoError::Kind::bad_header,
                  "read_checkpoint: unsupported version: " + path.string());

  Checkpoint ckpt;
  std::uint32_t n;
  std::memcpy(&n, header + 8, 4);
  std::memcpy(&ckpt.epoch, header + 12, 4);
  std::memcpy(&ckpt.adam_step, header + 16, 8);

  for (std::uint32_t r = 0; r < n; ++r) {
    CheckpointRecord rec;
    const auto name_len = get<std::uint16_t>(in, path);
    rec.name.resize(name_len);
    in.read(rec.name.data(), name_len);
    if (in.gcount() != static_cast<std::streamsize>(name_len))
      throw IoError(IoError::Kind::truncated, "read_checkpoint: truncated: " + path.string());
    const auto rank = get<std::uint16_t>(in, path);
    if (rank < 1 || rank > 5)
      throw IoError(IoError::Kind::bad_header, "read_checkpoint: bad rank: " + rec.name);
    std::size_t count = 1;
    for (int i = 0; i < 5; ++i) {
      const auto d = get<std::uint32_t>(in, path);
      if (i < rank) {
        rec.shape.push_back(static_cast<int>(d));
        count *= d;
      }
    }
    rec.values.resize(count);
    in.read(reinterpret_cast<char*>(rec.values.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float)))
      throw IoError(IoError::Kind::truncated,
                    "read_checkpoint: payload truncated: " + rec.name);
    for (float v : rec.values)
      if (!std::isfinite(v))
        throw IoError(IoError::Kind::nan_payload,
                      "read_checkpoint: non-finite payload: " + rec.name);
    ckpt.records.push_back(std::move(rec));
  }
  return ckpt;
}

Checkpoint pack_state(const std::vector<ad::Parameter<float>*>& params,
                      const ad::Adam<float>* opt, std::uint32_t epoch) {
  Checkpoint ckpt;
  ckpt.epoch = epoch;
  for (const auto* p : params) ckpt.records.push_back({p->name, p->shape, p->value});
  if (opt) {
    ckpt.adam_step = static_cast<std::uint64_t>(opt->step_count());
    const auto& ps = opt->params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      ckpt.records.push_back({"adam.m." + ps[i]->name, ps[i]->shape, opt->first_moments()[i]});
      ckpt.records.push_back({"adam.v." + ps[i]->name, ps[i]->shape, opt->second_moments()[i]});
    }
  }
  return ckpt;
}

void unpack_state(const Checkpoint& ckpt, const std::vector<ad::Parameter<float>*>& params,
                  ad::Adam<float>* opt) {
  for (auto* p : params) {
    const CheckpointRecord* rec = ckpt.find(p->name);
    if (!rec) throw ConfigError("checkpoint: missing parameter '" + p->name + "'");
    if (rec->shape != p->shape)
      throw ConfigError("checkpoint: shape mismatch for parameter '" + p->name + "'");
    p->value = rec->values;
  }
  if (opt) {
    const auto& ps = opt->params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const CheckpointRecord* m = ckpt.find("adam.m." + ps[i]->name);
      const CheckpointRecord* v = ckpt.find("adam.v." + ps[i]->name);
      if (!m || !v)
        throw ConfigError("checkpoint: missing optimizer state for '" + ps[i]->name + "'");
      if (m->shape != ps[i]->shape || v->shape != ps[i]->shape)
        throw ConfigError("checkpoint: optimizer state shape mismatch for '" + ps[i]->name + "'");
      opt->first_moments()[i] = m->values;
      opt->second_moments()[i] = v->values;
    }
    opt->set_step_count(static_cast<std::int64_t>(ckpt.adam_step));
  }
}

}  // namespace velbuild::io
