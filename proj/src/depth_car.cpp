// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/depth_car.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "dgiqa/errors.hpp"

namespace dgiqa {

namespace {

void check_heads(std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) {
    throw DimensionError("attention: " + std::to_string(heads) + " heads do not divide model dim " + std::to_string(dim));
  }
}

// [N,T,D] -> [N,heads,T,dk]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t n = x.shape()[0], t = x.shape()[1], d = x.shape()[2];
  return permute(reshape(x, {n, t, heads, d / heads}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
  const std::size_t n = x.shape()[0], h = x.shape()[1], t = x.shape()[2], dk = x.shape()[3];
  return reshape(permute(x, {0, 2, 1, 3}), {n, t, h * dk});
}

Tensor multi_head(const Tensor& q_tokens, const Tensor& kv_tokens, const AttentionParams& p, Tensor* weights) {
  const std::size_t d = p.dim();
  check_heads(d, p.heads);
  if (q_tokens.shape() != kv_tokens.shape()) {
    throw DimensionError("attention: query tokens " + shape_str(q_tokens.shape()) + " and key/value tokens " +
                         shape_str(kv_tokens.shape()) + " differ");
  }
  if (q_tokens.shape()[2] != d) {
    throw DimensionError("attention: token width " + std::to_string(q_tokens.shape()[2]) + " != projection dim " +
                         std::to_string(d));
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(d / p.heads));
  Tensor q = split_heads(matmul(q_tokens, p.w_q), p.heads);
  Tensor k = split_heads(matmul(kv_tokens, p.w_k), p.heads);
  Tensor v = split_heads(matmul(kv_tokens, p.w_v), p.heads);
  Tensor att = softmax(scale(matmul(q, transpose_last(k)), inv_sqrt_dk), 3);
  if (weights) *weights = att;
  return matmul(merge_heads(matmul(att, v)), p.w_o);
}

Tensor finish(const Tensor& attended, const Tensor& residual, const AttentionParams& p, const AttentionOptions& o) {
  Tensor out = o.residual ? add(residual, attended) : attended;
  if (o.layer_norm) out = layer_norm(out, p.ln_gamma, p.ln_beta);
  return out;
}

Tensor square_xavier(std::size_t rows, std::size_t cols, Rng& rng) { return xavier_uniform({rows, cols}, rows, cols, rng); }

}  // namespace

void AttentionParams::visit(const std::string& prefix, const TensorVisitor& fn) {
  fn(prefix + ".w_q", w_q);
  fn(prefix + ".w_k", w_k);
  fn(prefix + ".w_v", w_v);
  fn(prefix + ".w_o", w_o);
  if (ln_gamma.defined()) {
    fn(prefix + ".ln.gamma", ln_gamma);
    fn(prefix + ".ln.beta", ln_beta);
  }
}

void MlpParams::visit(const std::string& prefix, const TensorVisitor& fn) {
  fn(prefix + ".fc1.weight", w1);
  fn(prefix + ".fc1.bias", b1);
  fn(prefix + ".fc2.weight", w2);
  fn(prefix + ".fc2.bias", b2);
}

void DepthCarParams::visit(const std::string& prefix, const TensorVisitor& fn) {
  cross.visit(prefix + ".cross", fn);
  self.visit(prefix + ".self", fn);
  if (mlp) mlp->visit(prefix + ".mlp", fn);
}

AttentionParams init_attention(std::size_t dim, const AttentionOptions& options, Rng& rng) {
  check_heads(dim, options.heads);
  AttentionParams p;
  p.heads = options.heads;
  p.w_q = square_xavier(dim, dim, rng);
  p.w_k = square_xavier(dim, dim, rng);
  p.w_v = square_xavier(dim, dim, rng);
  p.w_o = square_xavier(dim, dim, rng);
  if (options.layer_norm) {
    p.ln_gamma = Tensor::full({dim}, 1.0, true);
    p.ln_beta = Tensor::zeros({dim}, true);
  }
  return p;
}

DepthCarParams init_depth_car(const DepthCarConfig& config, Rng& rng) {
  DepthCarParams p;
  p.cross = init_attention(config.model_dim, config.attention, rng);
  p.self = init_attention(config.model_dim, config.attention, rng);
  if (config.refine_mlp) {
    const std::size_t d = config.model_dim, hidden = 4 * config.model_dim;
    p.mlp = MlpParams{xavier_uniform({hidden, d}, d, hidden, rng), Tensor::zeros({hidden}, true),
                      xavier_uniform({d, hidden}, hidden, d, rng), Tensor::zeros({d}, true)};
  }
  return p;
}

TokenMap align_concat(const FeaturePyramid& pyramid) {
  const Tensor& last = pyramid.stages.back();
  if (last.rank() != 4) throw DimensionError("align_concat: stage 4 is not NCHW");
  const std::size_t h = last.shape()[2], w = last.shape()[3];
  std::vector<Tensor> aligned;
  for (const Tensor& stage : pyramid.stages) {
    if (stage.shape()[0] != last.shape()[0]) throw DimensionError("align_concat: stages disagree on batch size");
    aligned.push_back(stage.shape()[2] == h && stage.shape()[3] == w ? stage : resize_avg(stage, h, w));
  }
  Tensor map = concat(aligned, 1);
  const std::size_t n = map.shape()[0], d = map.shape()[1];
  return TokenMap{permute(reshape(map, {n, d, h * w}), {0, 2, 1}), h, w};
}

Tensor tokens_to_map(const TokenMap& map) {
  return reshape(permute(map.tokens, {0, 2, 1}), {map.batch(), map.dim(), map.h, map.w});
}

TokenMap cross_attention(const TokenMap& q_src, const TokenMap& kv_src, const AttentionParams& params,
                         const AttentionOptions& options, Tensor* weights) {
  if (q_src.h != kv_src.h || q_src.w != kv_src.w) throw DimensionError("cross_attention: token grids differ");
  Tensor attended = multi_head(q_src.tokens, kv_src.tokens, params, weights);
  return TokenMap{finish(attended, kv_src.tokens, params, options), kv_src.h, kv_src.w};
}

TokenMap self_attention_refine(const TokenMap& fused, const AttentionParams& params, const AttentionOptions& options,
                               const MlpParams* mlp, Tensor* weights) {
  Tensor attended = multi_head(fused.tokens, fused.tokens, params, weights);
  Tensor out = finish(attended, fused.tokens, params, options);
  if (mlp) {
    const std::size_t n = out.shape()[0], t = out.shape()[1], d = out.shape()[2];
    Tensor flat = reshape(out, {n * t, d});
    Tensor hidden = linear(relu(linear(flat, mlp->w1, mlp->b1)), mlp->w2, mlp->b2);
    out = reshape(add(flat, hidden), {n, t, d});
  }
  return TokenMap{out, fused.h, fused.w};
}

Tensor depth_car_forward(const TokenMap& rgb, const TokenMap& depth, const DepthCarParams& params,
                         const DepthCarConfig& config) {
  const TokenMap& queries = config.swap_modalities ? rgb : depth;
  const TokenMap& keys = config.swap_modalities ? depth : rgb;
  TokenMap fused = cross_attention(queries, keys, params.cross, config.attention);
  TokenMap refined = self_attention_refine(fused, params.self, config.attention, params.mlp ? &*params.mlp : nullptr);
  return tokens_to_map(refined);
}

std::size_t depth_car_param_count(const DepthCarConfig& config) {
  const std::size_t d = config.model_dim;
  std::size_t per_block = 4 * d * d + (config.attention.layer_norm ? 2 * d : 0);
  std::size_t total = 2 * per_block;
  if (config.refine_mlp) total += (4 * d * d + 4 * d) + (4 * d * d + d);
  return total;
}

}  // namespace dgiqa
