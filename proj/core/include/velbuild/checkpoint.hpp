#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "velbuild/autodiff.hpp"
#include "velbuild/optim.hpp"

namespace velbuild::io {

// VELC container: 32-byte header, then named records back to back.
//   bytes  0..3   magic "VELC"
//   bytes  4..5   version (u16, currently 1)
//   bytes  6..7   reserved, zero
//   bytes  8..11  record count (u32)
//   bytes 12..15  epoch (u32)
//   bytes 16..23  adam step (u64; 0 when no optimizer state is stored)
//   bytes 24..31  reserved, zero
// Record: u16 name length, UTF-8 name, u16 rank, 5 x u32 dims, f32 payload.

struct CheckpointRecord {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t epoch = 0;
  std::uint64_t adam_step = 0;
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Snapshot live parameters (and optimizer moments, when given) into a
/// checkpoint. Moment records are named "adam.m.<param>" / "adam.v.<param>".
Checkpoint pack_state(const std::vector<ad::Parameter<float>*>& params,
                      const ad::Adam<float>* opt, std::uint32_t epoch);

/// Restore parameter values (and moments into opt, when given). Throws
/// ConfigError when a parameter is missing or shaped differently.
void unpack_state(const Checkpoint& ckpt, const std::vector<ad::Parameter<float>*>& params,
                  ad::Adam<float>* opt);

}  // namespace velbuild::io
