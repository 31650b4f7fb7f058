// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/layers.hpp"

#include <cmath>

namespace dgiqa {

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

ConvLayer ConvLayer::create(const ConvSpec& spec, Rng& rng) {
  const std::size_t area = spec.kernel_h * spec.kernel_w;
  ConvLayer layer;
  layer.spec = spec;
  layer.weight = xavier_uniform({spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w},
                                spec.in_channels * area, spec.out_channels * area, rng);
  layer.bias = Tensor::zeros({spec.out_channels}, true);
  return layer;
}

void ConvLayer::visit(const std::string& prefix, const TensorVisitor& fn) {
  fn(prefix + ".weight", weight);
  fn(prefix + ".bias", bias);
}

void visit(BatchNorm& bn, const std::string& prefix, const TensorVisitor& fn) {
  fn(prefix + ".gamma", bn.gamma);
  fn(prefix + ".beta", bn.beta);
  fn(prefix + ".running_mean", bn.running_mean);
  fn(prefix + ".running_var", bn.running_var);
}

ConvBnRelu ConvBnRelu::create(const ConvSpec& spec, Rng& rng) {
  return ConvBnRelu{ConvLayer::create(spec, rng), BatchNorm::create(spec.out_channels)};
}

Tensor ConvBnRelu::forward(const Tensor& x, Mode mode, const BnOptions& options) {
  return relu(batchnorm2d(conv(x), bn, mode, options));
}

void ConvBnRelu::visit(const std::string& prefix, const TensorVisitor& fn) {
  conv.visit(prefix + ".conv", fn);
  dgiqa::visit(bn, prefix + ".bn", fn);
}

}  // namespace dgiqa
