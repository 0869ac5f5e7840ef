#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "json.hpp"
#include "schoolcount/network.hpp"
#include "schoolcount/optimizer.hpp"

namespace schoolcount {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  std::uint32_t epoch = 0;
  ModelParams params;
  std::optional<AdamState> optimizer;
  std::optional<ModelParams> best;  // best-so-far weights, kept for resuming
  nlohmann::json state = nlohmann::json::object();  // trainer bookkeeping
};

// Little-endian container: "SCKT", u32 version, u64 config hash, model config
// JSON, u32 epoch, optimizer scalars, trainer JSON, then one record per tensor
// (name, shape, dtype, raw bytes, CRC32). Written to a temporary file and
// renamed into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

// Throws CheckpointError on a bad magic, version, checksum or truncated file,
// and when `expected` is given and its hash differs from the stored one.
// Nothing is returned unless the whole file verified.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace schoolcount
