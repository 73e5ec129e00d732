#pragma once

#include <cstdint>
#include <filesystem>

#include "spikegraph/nn.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t plan_hash = 0;
  NamedTensors tensors;

  /// Throws FormatError when absent.
  const Tensor& get(const std::string& name) const;
};

/// "SGCK", u32 version, u64 plan hash, u32 count, then per tensor a u32 name
/// length, the name bytes and a tensor blob. Written atomically.
void save_checkpoint(const std::filesystem::path& path, std::uint64_t plan_hash, const NamedTensors& tensors);

/// Throws IoError if unreadable, FormatError if malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws ConfigError when the stored plan hash differs from `expected`.
void require_plan(const Checkpoint& ckpt, std::uint64_t expected);

/// Copies stored values into same-named tensors; every target must be present.
void restore_into(const Checkpoint& ckpt, const NamedTensors& targets, const std::string& prefix = "");

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
