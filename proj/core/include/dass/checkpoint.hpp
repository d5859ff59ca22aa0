#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dass/tensor.hpp"

namespace dass {

inline constexpr char kCheckpointMagic[8] = {'D', 'A', 'S', 'S', 'C', 'K', 'P', 'T'};
inline constexpr uint8_t kCheckpointVersion = 1;

/// On-disk container: magic, version byte, u32 header length, JSON header,
/// u32 tensor count, then per tensor a u32 name length, the name, u32 rank,
/// rank u32 dims and the values as little-endian float32.
struct CheckpointFile {
  std::string header_json;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_checkpoint_file(const CheckpointFile& file, const std::filesystem::path& path);
/// Throws FormatError on a bad magic, unknown version or truncation, naming
/// the byte offset.
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

std::vector<uint8_t> encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(const std::vector<uint8_t>& bytes);

}  // namespace dass
