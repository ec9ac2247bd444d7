#pragma once

#include <filesystem>
#include <optional>

#include "collabvn/train.hpp"

namespace collabvn {

/// Everything stored in a VNCKPT01 file.
struct Checkpoint {
  VnParams params;
  int disparities = 0;  // D of the training volumes; the state uses d / (D - 1)
  int epoch = 0;        // completed epochs, for resuming
  std::optional<AdamState> adam;

  double scale() const noexcept { return disparities > 1 ? disparities - 1 : 1; }
};

/// "VNCKPT01", u32 manifest length, JSON manifest, then named tensors
/// (u16 name length, name, u8 rank, u32 dims, float32 data), little-endian.
/// Values are stored as float32.
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Rounds every parameter (and optimizer moment) to float32, i.e. the state a
/// checkpoint round trip produces.
void round_to_float(Checkpoint& ckpt);

}  // namespace collabvn
