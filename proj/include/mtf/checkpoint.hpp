#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "mtf/model.hpp"
#include "mtf/params.hpp"
#include "mtf/traffic.hpp"
#include "mtf/training.hpp"

namespace mtf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  ModelParams params;
  NormalizationStats stats;
  /// Provenance: data hash, seed, pipeline settings, service ids.
  nlohmann::json metadata = nlohmann::json::object();
  std::optional<AdamState> adam;
};

/// Binary container: magic "MTFCKPT1", u32 version, u64 payload length,
/// payload (config JSON, named tensors as raw little-endian doubles,
/// normalization stats, optional optimizer state), u64 FNV-1a of the payload.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
/// Throws CheckpointError on a wrong magic, unsupported version, truncation,
/// checksum mismatch, or parameters that do not fit the stored config.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mtf
