// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container (all integers little-endian):
//
//   "DGQA" | u32 version | u32 len + model config JSON | u64 seed |
//   u32 entry count | entries...
//   entry: u32 key len | key | u32 rank | u64 dims[rank] | f64 values[numel]
//
// Optimizer state, when present, is stored as extra entries under
// "adam.step", "adam.m.<param>" and "adam.v.<param>".

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "dgiqa/model.hpp"
#include "dgiqa/training.hpp"

namespace dgiqa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
  Model model;
  std::uint64_t seed = 0;
  std::optional<AdamWState> optimizer;
};

void save_checkpoint(const std::filesystem::path& path, Model& model, std::uint64_t seed,
                     const AdamWState* optimizer = nullptr);
/// Throws DataError on a bad magic, unknown version, truncated file, or a
/// tensor set that does not match the stored configuration.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dgiqa
