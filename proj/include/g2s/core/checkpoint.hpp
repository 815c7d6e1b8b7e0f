#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "g2s/core/tensor.hpp"

namespace g2s {

// Little-endian layout:
//   "G2SK" | u32 version | u32 count |
//   count x (u32 name_len | name | u32 rank | u64 dims[rank] | f64 payload)
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::vector<std::uint64_t> dims;
  MatrixD value;
};

void save_checkpoint(const std::filesystem::path& path, const DParameterRefs& params);

std::map<std::string, CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

// Restores every parameter by name; throws FormatError on missing names or
// shape disagreement.
void load_checkpoint(const std::filesystem::path& path, const DParameterRefs& params);

}  // namespace g2s
