#pragma once

#include <cstdint>
#include <filesystem>

#include "starbri/network.hpp"
#include "starbri/optimizer.hpp"
#include "starbri/run_config.hpp"

namespace starbri {

// SBCK layout (little-endian): "SBCK", u32 version, u32 blob length, JSON
// blob {"run": RunConfig, "state": {...}}, u32 tensor count, then per tensor
// u16 name length, name, u8 rank, u32 dims, raw values in the run precision.
// Tensors: "param.<name>", "adam.m.<name>", "adam.v.<name>", "adam.steps".

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct TrainingState {
  ModelParams<T> params;
  OptimState<T> optim;  // may be empty (never stepped)
  std::uint64_t iteration = 0;
};

template <typename T>
struct Checkpoint {
  RunConfig config;
  TrainingState<T> state;
};

/// The stored precision must match T (cfg.precision).
template <typename T>
void checkpoint_save(const std::filesystem::path& path, const RunConfig& cfg,
                     const TrainingState<T>& state);

template <typename T>
Checkpoint<T> checkpoint_load(const std::filesystem::path& path);

/// Reads only the header and configuration blob.
RunConfig checkpoint_config(const std::filesystem::path& path);

}  // namespace starbri
