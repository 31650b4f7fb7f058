// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Newline-delimited JSON manifests. One record per line:
//   {"rgb_path": "...", "depth_path": "...", "score": 0.77, "group_id": "scene_003"}
// Relative paths resolve against the manifest's directory.

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dgiqa/training.hpp"

namespace dgiqa {

struct ManifestRecord {
  std::filesystem::path rgb_path;
  std::filesystem::path depth_path;
  double score = 0.0;
  std::optional<std::string> group_id;

  bool operator==(const ManifestRecord&) const = default;
};

struct ManifestOptions {
  /// Check that both referenced files exist.
  bool check_files = true;
  /// Resolve relative paths against the manifest directory.
  bool resolve_relative = true;
};

/// Blank lines are skipped. Errors carry the 1-based line number.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path, const ManifestOptions& options = {});
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records);

/// Throws DataError unless 0 <= score <= 1.
void validate_score(double score);

/// Loads every record's image pair into memory. Records without a group id
/// get their own singleton group.
std::vector<Sample> load_samples(std::span<const ManifestRecord> records);

/// Full-reference pairs manifest:
///   {"ref_rgb":..,"ref_depth":..,"dist_rgb":..,"dist_depth":..,"score":..}
struct PairRecord {
  std::filesystem::path ref_rgb;
  std::filesystem::path ref_depth;
  std::filesystem::path dist_rgb;
  std::filesystem::path dist_depth;
  double score = 0.0;

  bool operator==(const PairRecord&) const = default;
};

std::vector<PairRecord> load_pairs_manifest(const std::filesystem::path& path, const ManifestOptions& options = {});
void write_pairs_manifest(const std::filesystem::path& path, std::span<const PairRecord> records);

}  // namespace dgiqa
