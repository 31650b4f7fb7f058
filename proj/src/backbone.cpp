// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/backbone.hpp"

#include <string>

#include "dgiqa/errors.hpp"

namespace dgiqa {

namespace {

ConvSpec entry_spec(std::size_t stage, std::size_t in, std::size_t out) {
  if (stage == 0) return ConvSpec::square(in, out, 4, 4, 0);
  return ConvSpec::square(in, out, 3, 2, 1);
}

std::size_t conv_bn_count(const ConvSpec& s) {
  return s.out_channels * s.in_channels * s.kernel_h * s.kernel_w + s.out_channels + 2 * s.out_channels;
}

}  // namespace

void check_backbone_input(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0) {
    throw DimensionError("backbone input " + std::to_string(h) + "x" + std::to_string(w) +
                         " must be a multiple of 32 in both dims; crop or pad the image first");
  }
}

BackboneParams init_backbone(const BackboneConfig& config, std::size_t in_channels, Rng& rng) {
  check_backbone_input(config.input_h, config.input_w);
  BackboneParams p;
  p.in_channels = in_channels;
  std::size_t prev = in_channels;
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t ch = config.stage_channels(s);
    p.stages[s].entry = ConvBnRelu::create(entry_spec(s, prev, ch), rng);
    for (std::size_t b = 0; b < config.depth_blocks_per_stage; ++b) {
      p.stages[s].blocks.push_back(ConvBnRelu::create(ConvSpec::square(ch, ch, 3, 1, 1), rng));
    }
    prev = ch;
  }
  return p;
}

void BackboneParams::visit(const std::string& prefix, const TensorVisitor& fn) {
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::string sp = prefix + ".stage" + std::to_string(s + 1);
    stages[s].entry.visit(sp + ".entry", fn);
    for (std::size_t b = 0; b < stages[s].blocks.size(); ++b) stages[s].blocks[b].visit(sp + ".block" + std::to_string(b), fn);
  }
}

FeaturePyramid extract(const Tensor& image, BackboneParams& params, Mode mode, const BnOptions& bn) {
  if (image.rank() != 4) throw DimensionError("extract: expected NCHW image, got " + shape_str(image.shape()));
  if (image.shape()[1] != params.in_channels) {
    throw DimensionError("extract: channel axis (1) has " + std::to_string(image.shape()[1]) + ", stream expects " +
                         std::to_string(params.in_channels));
  }
  check_backbone_input(image.shape()[2], image.shape()[3]);
  FeaturePyramid pyramid;
  Tensor x = image;
  for (std::size_t s = 0; s < kStages; ++s) {
    x = params.stages[s].entry.forward(x, mode, bn);
    for (ConvBnRelu& block : params.stages[s].blocks) x = block.forward(x, mode, bn);
    pyramid.stages[s] = x;
  }
  return pyramid;
}

std::size_t backbone_param_count(const BackboneConfig& config, std::size_t in_channels) {
  std::size_t total = 0;
  std::size_t prev = in_channels;
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t ch = config.stage_channels(s);
    total += conv_bn_count(entry_spec(s, prev, ch));
    total += config.depth_blocks_per_stage * conv_bn_count(ConvSpec::square(ch, ch, 3, 1, 1));
    prev = ch;
  }
  return total;
}

}  // namespace dgiqa
