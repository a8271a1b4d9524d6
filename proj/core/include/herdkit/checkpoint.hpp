#pragma once

#include <string>

#include "herdkit/model.hpp"

namespace herdkit {

// Checkpoint format (little-endian throughout):
//   bytes 0-3   magic "HKPT"
//   bytes 4-7   format version (u32, currently 1)
//   bytes 8-15  manifest length in bytes (u64)
//   manifest    UTF-8 JSON: arch_id, init_seed, BN update counters, and a
//               tensor list (name, shape, dtype, element offset, count)
//   payload     raw float32 tensor data, concatenated in manifest order
// The payload covers learnable parameters plus BN running stats, so a loaded
// model reproduces eval-mode embeddings bit-for-bit.
void save_checkpoint(const Model<float>& model, const std::string& path);
void save_checkpoint(const Model<double>& model, const std::string& path);

// Throws std::runtime_error on a missing file, bad magic/version, manifest
// that disagrees with the payload length, or a truncated payload.
Model<float> load_checkpoint(const std::string& path);

}  // namespace herdkit
