#pragma once

// Binary model checkpoints: "FQAT" magic, format version, a layer manifest
// (names, tags, shapes, quantizer specs) and row-major float32 little-endian
// weight/bias blobs. Saving is deterministic and loading is byte-exact:
// save(load(p)) reproduces p bit for bit.

#include <string>

#include "fqat/layers.hpp"

namespace fqat::layers {

inline constexpr char kCheckpointMagic[4] = {'F', 'Q', 'A', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Throws std::runtime_error on I/O failure.
void save_checkpoint(const ToyModel& model, const std::string& path);

// Throws std::runtime_error on I/O failure, bad magic, unsupported version,
// or a manifest that does not match the declared geometry.
ToyModel load_checkpoint(const std::string& path);

}  // namespace fqat::layers
