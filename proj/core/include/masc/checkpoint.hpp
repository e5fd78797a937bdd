#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "masc/model.hpp"

namespace masc {

/// Checkpoint layout (little-endian):
///   char[4] "MCKP", u32 version, u64 header length, header JSON
///   {"model_config", "topology"}, u64 tensor count, then per tensor:
///   u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values.
/// Trainable parameters come first in creation order, then buffers by name.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const PoseLifter& model);
/// Rebuilds the model from its stored config and topology, then overwrites
/// every parameter and buffer. Missing or extra tensors are format errors.
std::unique_ptr<PoseLifter> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const PoseLifter& model);
std::unique_ptr<PoseLifter> load_checkpoint(const std::filesystem::path& path);

}  // namespace masc
