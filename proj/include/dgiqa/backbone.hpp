// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical convolutional feature extractor producing a four-stage pyramid
// at strides 4/8/16/32 with channels (c, 2c, 4c, 8c). One instance per input
// modality; the RGB and depth streams never share parameters.

#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "dgiqa/layers.hpp"

namespace dgiqa {

inline constexpr std::size_t kStages = 4;
inline constexpr std::array<std::size_t, kStages> kStageStrides{4, 8, 16, 32};

struct FeaturePyramid {
  std::array<Tensor, kStages> stages;
};

struct BackboneConfig {
  std::size_t base_channels = 16;
  std::size_t input_h = 64;
  std::size_t input_w = 64;
  std::size_t depth_blocks_per_stage = 1;

  std::size_t stage_channels(std::size_t stage) const { return base_channels << stage; }
};

struct BackboneStage {
  ConvBnRelu entry;  // stage 0: 4x4 stride-4 patch embedding; later: 3x3 stride-2 downsample
  std::vector<ConvBnRelu> blocks;
};

struct BackboneParams {
  std::size_t in_channels = 3;
  std::array<BackboneStage, kStages> stages;

  void visit(const std::string& prefix, const TensorVisitor& fn);
};

/// Throws DimensionError unless both spatial dims are positive multiples of 32.
void check_backbone_input(std::size_t h, std::size_t w);

BackboneParams init_backbone(const BackboneConfig& config, std::size_t in_channels, Rng& rng);

/// image [N, in_channels, H, W] -> pyramid.
FeaturePyramid extract(const Tensor& image, BackboneParams& params, Mode mode, const BnOptions& bn = {});

/// Learnable scalars of one stream (excludes BN running statistics).
std::size_t backbone_param_count(const BackboneConfig& config, std::size_t in_channels);

}  // namespace dgiqa
