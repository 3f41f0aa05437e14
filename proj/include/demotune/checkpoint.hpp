#pragma once

#include <filesystem>

#include "demotune/trainer.hpp"

namespace demotune {

inline constexpr char kCheckpointMagic[8] = {'D', 'T', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr int kCheckpointVersion = 1;

// Layout: 8-byte magic, u64 header length, JSON header (version, task, train
// config, vocab, demo pools, tensor index), then little-endian f64 payloads in
// index order. Loading rebuilds the model and validates every tensor shape.
void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace demotune
