// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Transformer-CNN Bridge: 1x1 projection C -> C', per-location
// squeeze/excite gating A = sigmoid(excite(relu(squeeze(x)))), then
// relu(bn(conv3x3(x * A))).
//
// Squeeze and excite are 1x1 convolutions over the full map (no global pooling
// before the squeeze), and the gate is computed from the projected features.

#pragma once

#include <cstddef>

#include "dgiqa/layers.hpp"

namespace dgiqa {

struct TcbShape {
  std::size_t in_channels;   // C
  std::size_t out_channels;  // C'
  std::size_t reduction = 16;

  /// C'' = max(1, C' / r)
  std::size_t squeezed() const;
};

struct TcbParams {
  TcbShape shape;
  ConvLayer proj;
  ConvLayer squeeze;
  ConvLayer excite;
  ConvLayer local;
  BatchNorm bn;

  void visit(const std::string& prefix, const TensorVisitor& fn);
};

TcbParams init_tcb(const TcbShape& shape, Rng& rng);

/// f_in [N,C,H,W] -> [N,C',H,W]. When `attention` is non-null it receives A.
Tensor tcb_forward(const Tensor& f_in, TcbParams& params, Mode mode, const BnOptions& bn = {},
                   Tensor* attention = nullptr);

/// Closed-form learnable-scalar count of one block.
std::size_t tcb_param_count(const TcbShape& shape);

}  // namespace dgiqa
