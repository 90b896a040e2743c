#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

namespace mdm::ckpt {

// On-disk artifact: a JSON metadata blob (configs, schedules, rng states,
// code version) plus named raw tensors. Binary layout, little-endian:
//   8-byte magic "MDMCKPT\x01" | u32 format version | u64 json length |
//   json bytes | u64 tensor count | per tensor: u16 name length, name,
//   u8 dtype code, u8 ndim, i64 dims, u64 byte length, contiguous data.
struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, torch::Tensor> tensors;
};

inline constexpr std::uint32_t kFormatVersion = 1;

// Writes atomically (temp file in the same directory, then rename).
void save(const std::filesystem::path& path, const Checkpoint& c);

// Throws DataError on malformed input, IoError when unreadable.
Checkpoint load(const std::filesystem::path& path);

}  // namespace mdm::ckpt
