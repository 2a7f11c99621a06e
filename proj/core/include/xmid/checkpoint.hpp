// Model checkpoint container: magic "XMID", format version, the model spec
// fields, then per-layer shape-tagged parameter blobs as little-endian 32-bit
// floats (batch-norm running statistics included).

#pragma once

#include <filesystem>

#include "xmid/model.hpp"

namespace xmid {

inline constexpr char kCheckpointMagic[4] = {'X', 'M', 'I', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(Model<float>& model, const std::filesystem::path& path);

ModelSpec read_checkpoint_spec(const std::filesystem::path& path);

// Rebuilds the model from the stored spec and restores every state tensor.
Model<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace xmid
