#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slab/encoder/config.hpp"
#include "slab/encoder/model.hpp"
#include "slab/numerics/tensor.hpp"

namespace slab {

enum class Strategy { kGeneric, kFp, kSc };

std::string_view to_string(Strategy s);  // "GENERIC", "FP", "SC"
Strategy parse_strategy(std::string_view text);  // case-insensitive

struct Lineage {
  Strategy strategy = Strategy::kSc;
  std::string parent_id;  // empty: no parent
  std::int64_t steps = 0; // cumulative pre-training steps, parent's included
  bool operator==(const Lineage&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor<float> value;
  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  EncoderConfig config;
  std::string vocab_fingerprint;
  Lineage lineage;
  std::int64_t step = 0;  // step of its own run at which it was written
  std::map<std::string, std::string> state;  // run bookkeeping, e.g. data cursor
  std::vector<NamedTensor> tensors;

  const Tensor<float>* find(std::string_view name) const;
  bool operator==(const Checkpoint&) const = default;
};

// Layout (integers little-endian):
//   "SLAB" | u32 version | u32 n | n bytes of JSON metadata
//   | u32 tensor count | per tensor: u32 name length, name, u32 rank, rank x u64 extent, u64 byte offset
//   | u64 data length | raw f32 data | u64 FNV-1a of everything before it
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Distinct errors: kParse (bad magic or metadata), kVersionMismatch,
// kTruncated, kChecksumMismatch.
Checkpoint deserialize_checkpoint(std::string_view bytes);

// Content id: hex of the trailer checksum.
std::string checkpoint_id(const Checkpoint& ckpt);

// Atomic (temp file + rename). Returns the checkpoint id.
std::string save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Encoder tensors in canonical order plus lineage metadata.
Checkpoint snapshot(const Encoder<float>& model, const Lineage& lineage, std::int64_t step);

// Rebuilds the encoder; kConfigMismatch when a tensor is missing or its
// shape disagrees with the config. Extra tensors (optimizer state, heads)
// are ignored.
Encoder<float> restore_encoder(const Checkpoint& ckpt);

struct CheckpointInfo {
  std::filesystem::path path;
  std::string id;
  Lineage lineage;
  std::int64_t step = 0;
  std::string vocab_fingerprint;
};

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

// Follows parent ids from `start` through the checkpoints in `known`,
// returning start first and the root last. Throws kInvalidArgument when a
// parent is not among `known`.
std::vector<CheckpointInfo> lineage_chain(const std::filesystem::path& start,
                                          std::span<const std::filesystem::path> known);

}  // namespace slab
