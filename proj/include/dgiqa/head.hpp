// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scoring head: two size-preserving dilated 3x3 convolutions (rates 2 and 4),
// each followed by BN and ReLU, then global average pooling and a sigmoid FC
// layer producing q in (0, 1).

#pragma once

#include <cstddef>

#include "dgiqa/layers.hpp"

namespace dgiqa {

struct HeadConfig {
  std::size_t in_channels = 120;    // D_model
  std::size_t hidden_channels = 120;  // D_head
  std::size_t dilation_a = 2;
  std::size_t dilation_b = 4;
};

struct HeadParams {
  ConvLayer dconv_a;
  BatchNorm bn_a;
  ConvLayer dconv_b;
  BatchNorm bn_b;
  Tensor fc_weight;  // [1, D_head]
  Tensor fc_bias;    // [1]

  void visit(const std::string& prefix, const TensorVisitor& fn);
};

HeadParams init_head(const HeadConfig& config, Rng& rng);

/// [N, D_model, h, w] -> [N, D_head, h, w]
Tensor dilated_stack(const Tensor& f_fused, HeadParams& params, Mode mode, const BnOptions& bn = {});

/// sigmoid(W_fc . GAP(f) + b_fc), one score per batch entry: [N].
Tensor predict(const Tensor& f_dilated, const HeadParams& params);

/// Full-reference variant on features of a reference/distorted pair produced
/// with shared weights: sigmoid(W_fc . GAP(f_ref - f_dist) + b_fc).
Tensor fr_predict(const Tensor& f_ref, const Tensor& f_dist, const HeadParams& params);

std::size_t head_param_count(const HeadConfig& config);

}  // namespace dgiqa
