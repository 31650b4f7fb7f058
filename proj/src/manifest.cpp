// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/manifest.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "dgiqa/errors.hpp"
#include "dgiqa/image_io.hpp"

namespace dgiqa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string where(const fs::path& path, std::size_t line) { return path.string() + ":" + std::to_string(line) + ": "; }

fs::path path_field(const json& j, const char* key, const fs::path& base, const ManifestOptions& options,
                    const fs::path& manifest, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw DataError(where(manifest, line) + "missing string field '" + key + "'");
  }
  fs::path p = it->get<std::string>();
  if (options.resolve_relative && p.is_relative()) p = base / p;
  if (options.check_files && !fs::exists(p)) {
    throw DataError(where(manifest, line) + "'" + key + "' refers to missing file " + p.string());
  }
  return p;
}

double score_field(const json& j, const fs::path& manifest, std::size_t line) {
  auto it = j.find("score");
  if (it == j.end() || !it->is_number()) throw DataError(where(manifest, line) + "missing numeric field 'score'");
  const double s = it->get<double>();
  try {
    validate_score(s);
  } catch (const DataError& e) {
    throw DataError(where(manifest, line) + e.what());
  }
  return s;
}

template <typename Fn>
void for_each_line(const fs::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DataError(where(path, line) + "malformed record");
    fn(j, line);
  }
}

// Paths under the manifest directory are stored relative to it.
std::string relative_string(const fs::path& p, const fs::path& base) {
  if (base.empty()) return p.string();
  const fs::path rel = p.lexically_normal().lexically_relative(base.lexically_normal());
  if (rel.empty() || *rel.begin() == "..") return p.string();
  return rel.string();
}

void write_lines(const fs::path& path, const std::vector<json>& lines) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
  for (const json& j : lines) out << j.dump() << '\n';
  if (!out) throw DataError("write failed for manifest '" + path.string() + "'");
}

}  // namespace

void validate_score(double score) {
  if (!(score >= 0.0 && score <= 1.0)) {
    throw DataError("score " + std::to_string(score) + " is outside [0, 1]");
  }
}

std::vector<ManifestRecord> load_manifest(const fs::path& path, const ManifestOptions& options) {
  const fs::path base = path.parent_path();
  std::vector<ManifestRecord> records;
  for_each_line(path, [&](const json& j, std::size_t line) {
    ManifestRecord r;
    r.rgb_path = path_field(j, "rgb_path", base, options, path, line);
    r.depth_path = path_field(j, "depth_path", base, options, path, line);
    r.score = score_field(j, path, line);
    if (auto it = j.find("group_id"); it != j.end() && !it->is_null()) {
      if (it->is_string()) {
        r.group_id = it->get<std::string>();
      } else if (it->is_number_integer()) {
        r.group_id = std::to_string(it->get<long long>());
      } else {
        throw DataError(where(path, line) + "'group_id' must be a string or integer");
      }
    }
    records.push_back(std::move(r));
  });
  return records;
}

void write_manifest(const fs::path& path, std::span<const ManifestRecord> records) {
  const fs::path base = path.parent_path();
  std::vector<json> lines;
  lines.reserve(records.size());
  for (const ManifestRecord& r : records) {
    validate_score(r.score);
    json j = {{"rgb_path", relative_string(r.rgb_path, base)},
              {"depth_path", relative_string(r.depth_path, base)},
              {"score", r.score}};
    if (r.group_id) j["group_id"] = *r.group_id;
    lines.push_back(std::move(j));
  }
  write_lines(path, lines);
}

std::vector<Sample> load_samples(std::span<const ManifestRecord> records) {
  std::vector<Sample> samples;
  samples.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ManifestRecord& r = records[i];
    samples.push_back({load_pair(r.rgb_path, r.depth_path), r.score, r.group_id.value_or("#" + std::to_string(i))});
  }
  return samples;
}

std::vector<PairRecord> load_pairs_manifest(const fs::path& path, const ManifestOptions& options) {
  const fs::path base = path.parent_path();
  std::vector<PairRecord> records;
  for_each_line(path, [&](const json& j, std::size_t line) {
    PairRecord r;
    r.ref_rgb = path_field(j, "ref_rgb", base, options, path, line);
    r.ref_depth = path_field(j, "ref_depth", base, options, path, line);
    r.dist_rgb = path_field(j, "dist_rgb", base, options, path, line);
    r.dist_depth = path_field(j, "dist_depth", base, options, path, line);
    r.score = score_field(j, path, line);
    records.push_back(std::move(r));
  });
  return records;
}

void write_pairs_manifest(const fs::path& path, std::span<const PairRecord> records) {
  const fs::path base = path.parent_path();
  std::vector<json> lines;
  for (const PairRecord& r : records) {
    validate_score(r.score);
    lines.push_back({{"ref_rgb", relative_string(r.ref_rgb, base)},
                     {"ref_depth", relative_string(r.ref_depth, base)},
                     {"dist_rgb", relative_string(r.dist_rgb, base)},
                     {"dist_depth", relative_string(r.dist_depth, base)},
                     {"score", r.score}});
  }
  write_lines(path, lines);
}

}  // namespace dgiqa
