#pragma once

#include <string>

#include "misleader/ensemble.hpp"
#include "misleader/nn.hpp"

namespace misleader {

/// Binary model snapshot, fixed little-endian layout:
///   magic "MSLD" | u16 format version | u32 descriptor length + UTF-8 JSON
///   (architecture + init seed) | u32 parameter count | per parameter:
///   u16 name length + UTF-8, u8 rank, u32 per dim, float32 payload |
///   u32 CRC32 over all preceding bytes.
/// Parameters are written in canonical (name) order. save -> load -> save
/// reproduces the file byte for byte.
constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

/// float32 quantization identical to a save/load round trip. Every model the
/// pipeline evaluates goes through this boundary so reruns that reload
/// checkpoints see bit-identical parameters.
Model quantize_to_checkpoint_precision(Model model);

/// Ensemble snapshot: one checkpoint per member plus a JSON manifest
/// (member file names in order). Paths derive from `prefix`.
void save_ensemble(const Ensemble& ensemble, const std::string& prefix);
Ensemble load_ensemble(const std::string& prefix);

}  // namespace misleader
