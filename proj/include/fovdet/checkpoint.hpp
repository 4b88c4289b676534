#pragma once

#include <cstdint>
#include <string>

#include "fovdet/autodiff.hpp"

namespace fovdet {

// Versioned binary checkpoint: magic, version, config hash, step, then named
// parameter blobs. Loading rejects a config-hash mismatch.
void save_checkpoint(const std::string& path, const ad::ParamStore& params,
                     std::uint64_t config_hash, std::uint64_t step);

struct CheckpointInfo {
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
};

CheckpointInfo load_checkpoint(const std::string& path, ad::ParamStore& params,
                               std::uint64_t expected_config_hash);

CheckpointInfo peek_checkpoint(const std::string& path);

}  // namespace fovdet
