// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/head.hpp"

#include "dgiqa/errors.hpp"

namespace dgiqa {

namespace {

ConvSpec dilated(std::size_t in, std::size_t out, std::size_t rate) { return ConvSpec::square(in, out, 3, 1, rate, rate); }

Tensor score_from_pooled(const Tensor& pooled, const HeadParams& params) {
  Tensor logits = linear(pooled, params.fc_weight, params.fc_bias);  // [N, 1]
  return reshape(sigmoid(logits), {pooled.shape()[0]});
}

}  // namespace

HeadParams init_head(const HeadConfig& config, Rng& rng) {
  HeadParams p;
  p.dconv_a = ConvLayer::create(dilated(config.in_channels, config.hidden_channels, config.dilation_a), rng);
  p.bn_a = BatchNorm::create(config.hidden_channels);
  p.dconv_b = ConvLayer::create(dilated(config.hidden_channels, config.hidden_channels, config.dilation_b), rng);
  p.bn_b = BatchNorm::create(config.hidden_channels);
  p.fc_weight = xavier_uniform({1, config.hidden_channels}, config.hidden_channels, 1, rng);
  p.fc_bias = Tensor::zeros({1}, true);
  return p;
}

void HeadParams::visit(const std::string& prefix, const TensorVisitor& fn) {
  dconv_a.visit(prefix + ".dconv_a", fn);
  dgiqa::visit(bn_a, prefix + ".bn_a", fn);
  dconv_b.visit(prefix + ".dconv_b", fn);
  dgiqa::visit(bn_b, prefix + ".bn_b", fn);
  fn(prefix + ".fc.weight", fc_weight);
  fn(prefix + ".fc.bias", fc_bias);
}

Tensor dilated_stack(const Tensor& f_fused, HeadParams& params, Mode mode, const BnOptions& bn) {
  Tensor a = relu(batchnorm2d(params.dconv_a(f_fused), params.bn_a, mode, bn));
  return relu(batchnorm2d(params.dconv_b(a), params.bn_b, mode, bn));
}

Tensor predict(const Tensor& f_dilated, const HeadParams& params) {
  return score_from_pooled(global_avg_pool(f_dilated), params);
}

Tensor fr_predict(const Tensor& f_ref, const Tensor& f_dist, const HeadParams& params) {
  if (f_ref.shape() != f_dist.shape()) {
    throw DimensionError("fr_predict: reference " + shape_str(f_ref.shape()) + " and distorted " +
                         shape_str(f_dist.shape()) + " features differ");
  }
  return score_from_pooled(global_avg_pool(sub(f_ref, f_dist)), params);
}

std::size_t head_param_count(const HeadConfig& c) {
  const std::size_t a = 9 * c.in_channels * c.hidden_channels + c.hidden_channels + 2 * c.hidden_channels;
  const std::size_t b = 9 * c.hidden_channels * c.hidden_channels + c.hidden_channels + 2 * c.hidden_channels;
  return a + b + c.hidden_channels + 1;
}

}  // namespace dgiqa
