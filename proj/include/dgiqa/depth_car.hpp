// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Depth-guided cross-attention and refinement.
//
// Pyramid stages are block-averaged to the stage-4 grid, concatenated along
// channels and flattened into T = h4*w4 tokens of width D. Depth tokens query
// RGB keys/values with multi-head scaled dot-product attention; the result is
// refined by multi-head self-attention. No positional encoding is used, so
// both blocks are equivariant under token permutations.

#pragma once

#include <cstddef>
#include <optional>

#include "dgiqa/backbone.hpp"
#include "dgiqa/layers.hpp"

namespace dgiqa {

struct TokenMap {
  Tensor tokens;  // [N, T, D]
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t batch() const { return tokens.shape()[0]; }
  std::size_t count() const { return tokens.shape()[1]; }
  std::size_t dim() const { return tokens.shape()[2]; }
};

struct AttentionOptions {
  std::size_t heads = 4;
  bool residual = true;
  bool layer_norm = false;
};

struct AttentionParams {
  std::size_t heads = 4;
  Tensor w_q;  // [D, D], applied as tokens @ W
  Tensor w_k;
  Tensor w_v;
  Tensor w_o;
  Tensor ln_gamma;  // defined only with layer_norm
  Tensor ln_beta;

  std::size_t dim() const { return w_q.shape()[0]; }
  void visit(const std::string& prefix, const TensorVisitor& fn);
};

/// Two-layer position-wise MLP with 4x expansion, used when refine_mlp is on.
struct MlpParams {
  Tensor w1, b1, w2, b2;
  void visit(const std::string& prefix, const TensorVisitor& fn);
};

struct DepthCarConfig {
  std::size_t model_dim = 120;
  AttentionOptions attention;
  bool refine_mlp = false;
  bool swap_modalities = false;
};

struct DepthCarParams {
  AttentionParams cross;
  AttentionParams self;
  std::optional<MlpParams> mlp;

  void visit(const std::string& prefix, const TensorVisitor& fn);
};

AttentionParams init_attention(std::size_t dim, const AttentionOptions& options, Rng& rng);
DepthCarParams init_depth_car(const DepthCarConfig& config, Rng& rng);

TokenMap align_concat(const FeaturePyramid& pyramid);
/// [N,T,D] -> [N,D,h,w]
Tensor tokens_to_map(const TokenMap& map);

/// Q from q_src (depth), K and V from kv_src (RGB). With residual on, kv_src
/// tokens are added to the projected output. `weights` receives the softmax
/// rows [N, heads, T, T].
TokenMap cross_attention(const TokenMap& q_src, const TokenMap& kv_src, const AttentionParams& params,
                         const AttentionOptions& options, Tensor* weights = nullptr);

/// Self-attention over `fused` with identity residual, plus the optional MLP.
TokenMap self_attention_refine(const TokenMap& fused, const AttentionParams& params, const AttentionOptions& options,
                               const MlpParams* mlp = nullptr, Tensor* weights = nullptr);

/// Full fusion: cross-attention then refinement, reshaped to the fused map.
Tensor depth_car_forward(const TokenMap& rgb, const TokenMap& depth, const DepthCarParams& params,
                         const DepthCarConfig& config);

std::size_t depth_car_param_count(const DepthCarConfig& config);

}  // namespace dgiqa
