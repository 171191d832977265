#pragma once

#include <string>

#include "fewsound/backbone.hpp"
#include "fewsound/sha256.hpp"

namespace fewsound {

// Checkpoint layout, little-endian:
//   magic "FSAM", format version u32, config digest (32 bytes), then one
//   record per state tensor: name length u16, name bytes, rank u8,
//   dims u32 each, f32 data.
// State tensors are the trainable parameters plus batchnorm running
// statistics, in model order.
inline constexpr char kCheckpointMagic[4] = {'F', 'S', 'A', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, Model<float>& model,
                     const Digest256& config_digest);

// Loads into an already-constructed model; every record must match an entry
// by name and shape, and every model entry must be present.
// Returns the stored config digest; pass expect_digest to refuse mismatches.
Digest256 load_checkpoint(const std::string& path, Model<float>& model,
                          const Digest256* expect_digest);

// Reads only the stored config digest.
Digest256 read_checkpoint_digest(const std::string& path);

}  // namespace fewsound
