#pragma once

// Binary checkpoint files (.mbf):
//   "MBF1" | u32 version | u64 header bytes | JSON header | f32 tensor data
// All integers and floats are little-endian. The header holds the model
// config, vocabulary, provenance and a tensor directory (name, shape, byte
// offset into the data block).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "minibert/data.hpp"
#include "minibert/model.hpp"
#include "minibert/strategies.hpp"

namespace minibert {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Provenance {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string parent_hash;  // empty for a run started from random init
  std::string kind;
  bool operator==(const Provenance&) const = default;
};

struct Checkpoint {
  ModelParams params;
  Vocabulary vocab;
  Provenance provenance;
  std::optional<OptimizerState> optimizer;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
// `source` names the input in error messages.
Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& source = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Also requires the embedded config to equal `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

// FNV-1a of the file contents; used as the parent hash of derived runs.
std::string checkpoint_hash(const std::filesystem::path& path);

}  // namespace minibert
