#ifndef TTLAB_CHECKPOINT_HPP
#define TTLAB_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>

#include "ttlab/ymodel.hpp"

namespace ttlab {

/// Training provenance stored alongside the weights. final_lr is what the
/// test-time loop picks up as its default learning rate.
struct TrainMeta {
  std::int64_t epochs = 0;
  float final_lr = 0.f;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  YModel model;
  TrainMeta meta;
};

/// Binary layout: 8-byte magic, u32 format version, u32-length-prefixed
/// JSON block (architecture + training metadata), then one record per
/// parameter in tape order: u32 name length, name bytes, u32 rank, u32
/// dims, raw 32-bit little-endian values. Saving the result of a load
/// reproduces the file byte for byte.
void save_checkpoint(const YModel& model, const TrainMeta& meta,
                     const std::filesystem::path& path);

/// Rejects wrong magic, unsupported versions, truncation and parameter
/// sets that do not match the declared architecture, all as IoError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ttlab

#endif  // TTLAB_CHECKPOINT_HPP
