#pragma once

// Binary parameter container.
//
// Layout (all integers little-endian):
//   magic "NCAPCKPT" (8 bytes), u32 version, u32 kind length, kind bytes, u32 tensor count,
//   then per tensor: u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64.
// Scalars are stored as 1x1 tensors. Loading validates the whole file before returning,
// so a failed load never yields partial state.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ncap/numcore.hpp"
#include "ncap/prior.hpp"
#include "ncap/toytask.hpp"

namespace ncap {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::string kind;  // "recognizer", "adapter", ...
  std::vector<NamedTensor> tensors;

  // Throws CheckpointError when the tensor is absent.
  const Matrix& at(std::string_view name) const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws CheckpointError on bad magic, unsupported version or truncation.
Checkpoint decode_checkpoint(std::string_view bytes);

// Writes atomically (temp file then rename).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint to_checkpoint(const RecognizerParams& params);
Checkpoint to_checkpoint(const AdapterParams& params);

// The expected shapes come from the config; a mismatch names the offending tensor.
RecognizerParams recognizer_from_checkpoint(const Checkpoint& ckpt, const TaskConfig& config);
AdapterParams adapter_from_checkpoint(const Checkpoint& ckpt, std::size_t embed, std::size_t feature_dim);

void save_recognizer(const RecognizerParams& params, const std::filesystem::path& path);
RecognizerParams load_recognizer(const std::filesystem::path& path, const TaskConfig& config);

}  // namespace ncap
