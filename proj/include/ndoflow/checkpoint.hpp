#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ndoflow/autodiff.hpp"

namespace ndoflow::ad {

/// Binary layout (all integers little-endian):
///   "NDOFLOW\0"  8-byte magic
///   u32          format version
///   u32          entry count
///   per entry:   u32 name length, name bytes, u32 rank, u64 extents[rank],
///                raw little-endian f64 values (row-major)
/// Metadata lives in a JSON sidecar at `<path>.json`.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParameterSet params;
  nlohmann::json metadata;
};

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const nlohmann::json& metadata);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path metadata_path(const std::filesystem::path& checkpoint);

}  // namespace ndoflow::ad
