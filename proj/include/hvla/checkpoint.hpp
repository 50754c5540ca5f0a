#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "hvla/tensor.hpp"

namespace hvla {

inline constexpr int kCheckpointVersion = 1;

// Writes <stem>.bin (named raw-double tensors) and <stem>.json (manifest with
// version, config hash, shapes, payload checksum).
void save_checkpoint(const std::filesystem::path& dir, const std::string& stem,
                     const std::map<std::string, Tensor>& params, uint64_t config_hash);

// Restores into an existing parameter map; rejects version, config-hash,
// checksum, name-set, or shape mismatches.
void load_checkpoint(const std::filesystem::path& dir, const std::string& stem,
                     std::map<std::string, Tensor>& params, uint64_t expected_config_hash);

}  // namespace hvla
