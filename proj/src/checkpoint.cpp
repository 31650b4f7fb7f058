// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "dgiqa/config.hpp"
#include "dgiqa/errors.hpp"

namespace dgiqa {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'G', 'Q', 'A'};

class Writer {
 public:
  explicit Writer(const fs::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot write checkpoint '" + path.string() + "'");
  }
  template <typename T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void entry(const std::string& key, const Shape& shape, std::span<const double> values) {
    bytes(key);
    pod(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) pod(static_cast<std::uint64_t>(d));
    out_.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  void finish(const fs::path& path) {
    out_.flush();
    if (!out_) throw DataError("write failed for checkpoint '" + path.string() + "'");
  }
  std::ofstream& stream() { return out_; }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const fs::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open checkpoint '" + path.string() + "'");
  }
  void raw(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw DataError("checkpoint '" + path_.string() + "' is truncated");
  }
  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  std::string bytes(std::uint32_t limit = 1u << 24) {
    const auto n = pod<std::uint32_t>();
    if (n > limit) throw DataError("checkpoint '" + path_.string() + "': implausible string length");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

 private:
  fs::path path_;
  std::ifstream in_;
};

struct Entry {
  Shape shape;
  std::vector<double> values;
};

}  // namespace

void save_checkpoint(const fs::path& path, Model& model, std::uint64_t seed, const AdamWState* optimizer) {
  auto tensors = model.tensors();
  auto params = model.parameters();
  if (optimizer && optimizer->step > 0 && (optimizer->m.size() != params.size() || optimizer->v.size() != params.size())) {
    throw DimensionError("save_checkpoint: optimizer state does not match the model parameters");
  }
  const bool with_adam = optimizer && optimizer->step > 0;
  Writer w(path);
  w.stream().write(kMagic, 4);
  w.pod(kCheckpointVersion);
  w.bytes(model_config_to_json(model.config()));
  w.pod(seed);
  const std::size_t count = tensors.size() + (with_adam ? 1 + 2 * params.size() : 0);
  w.pod(static_cast<std::uint32_t>(count));
  for (auto& [name, t] : tensors) w.entry(name, t.shape(), t.values());
  if (with_adam) {
    const double step = static_cast<double>(optimizer->step);
    w.entry("adam.step", {1}, std::span<const double>(&step, 1));
    for (std::size_t i = 0; i < params.size(); ++i) {
      w.entry("adam.m." + params[i].first, params[i].second.shape(), optimizer->m[i]);
      w.entry("adam.v." + params[i].first, params[i].second.shape(), optimizer->v[i]);
    }
  }
  w.finish(path);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  Reader r(path);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("'" + path.string() + "' is not a checkpoint (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint '" + path.string() + "' has unsupported version " + std::to_string(version));
  }
  const ModelConfig config = parse_model_config(r.bytes());
  const auto seed = r.pod<std::uint64_t>();
  const auto count = r.pod<std::uint32_t>();

  std::map<std::string, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string key = r.bytes(4096);
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw DataError("checkpoint entry '" + key + "': implausible rank");
    Entry e;
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(static_cast<std::size_t>(r.pod<std::uint64_t>()));
    const std::size_t n = shape_numel(e.shape);
    if (n > (std::size_t{1} << 32)) throw DataError("checkpoint entry '" + key + "': implausible size");
    e.values.resize(n);
    r.raw(e.values.data(), n * sizeof(double));
    if (!entries.emplace(std::move(key), std::move(e)).second) throw DataError("checkpoint has a duplicate entry");
  }

  LoadedCheckpoint out{Model::create(config, seed), seed, std::nullopt};
  std::size_t used = 0;
  for (auto& [name, t] : out.model.tensors()) {
    auto it = entries.find(name);
    if (it == entries.end()) throw DataError("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape != t.shape()) {
      throw DataError("checkpoint tensor '" + name + "' is " + shape_str(it->second.shape) + ", model expects " +
                      shape_str(t.shape()));
    }
    std::copy(it->second.values.begin(), it->second.values.end(), t.mutable_values().begin());
    ++used;
  }
  if (auto it = entries.find("adam.step"); it != entries.end()) {
    AdamWState state;
    state.step = static_cast<std::size_t>(it->second.values.at(0));
    ++used;
    for (auto& [name, t] : out.model.parameters()) {
      auto m = entries.find("adam.m." + name);
      auto v = entries.find("adam.v." + name);
      if (m == entries.end() || v == entries.end() || m->second.values.size() != t.numel() ||
          v->second.values.size() != t.numel()) {
        throw DataError("checkpoint optimizer state for '" + name + "' is missing or malformed");
      }
      state.m.push_back(std::move(m->second.values));
      state.v.push_back(std::move(v->second.values));
      used += 2;
    }
    out.optimizer = std::move(state);
  }
  if (used != entries.size()) throw DataError("checkpoint has entries the model does not use");
  return out;
}

}  // namespace dgiqa
