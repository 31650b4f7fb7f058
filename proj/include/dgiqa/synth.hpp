// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural RGB-D scenes with graded distortions and known quality scores.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "dgiqa/layers.hpp"
#include "dgiqa/model.hpp"

namespace dgiqa {

enum class Distortion { kGaussianBlur, kAdditiveNoise, kMixed };

Distortion parse_distortion(const std::string& name);
std::string to_string(Distortion distortion);

struct SynthSpec {
  std::size_t n_samples = 200;  // base scenes; each yields `levels` images
  std::size_t image_size = 80;
  Distortion distortion = Distortion::kGaussianBlur;
  std::size_t levels = 5;
  std::uint64_t seed = 0;
  double blur_sigma_max = 2.0;   // sigma at the last level
  double noise_sigma_max = 0.12;  // std of additive noise at the last level

  void validate() const;
};

SynthSpec load_synth_spec(const std::filesystem::path& path);

/// 0.05 + 0.9 * (1 - level / levels)
double synth_score(std::size_t level, std::size_t levels);

/// Clean scene: textured gradient background plus shapes, and a depth map
/// with one constant depth per shape over a background depth ramp.
RgbdImage render_scene(std::size_t size, std::uint64_t seed);

/// Separable Gaussian blur with reflected borders; sigma 0 returns a copy.
Tensor gaussian_blur(const Tensor& image, double sigma);
/// Adds N(0, sigma^2) per value and clamps to [0, 1].
Tensor additive_noise(const Tensor& image, double sigma, Rng& rng);

/// Magnitude grows linearly with level; level 0 leaves the image unchanged.
/// For kMixed, `use_noise` selects which distortion this scene gets.
Tensor distort(const Tensor& rgb, Distortion distortion, std::size_t level, const SynthSpec& spec, Rng& rng,
               bool use_noise = false);

/// Writes rgb/, depth/, manifest.jsonl, pairs.jsonl (reference = level 0),
/// and one manifest per level (level_<k>.jsonl). Returns the manifest path.
std::filesystem::path synth_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace dgiqa
