// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter-holding building blocks shared by the model modules.

#pragma once

#include <functional>
#include <random>
#include <string>

#include "dgiqa/ops.hpp"
#include "dgiqa/tensor.hpp"

namespace dgiqa {

using Rng = std::mt19937_64;

/// Called once per tensor with its canonical dotted path.
using TensorVisitor = std::function<void(const std::string& name, Tensor& tensor)>;

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct ConvLayer {
  ConvSpec spec;
  Tensor weight;
  Tensor bias;

  /// Xavier-uniform weight (fans include the kernel area), zero bias.
  static ConvLayer create(const ConvSpec& spec, Rng& rng);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, spec); }
  void visit(const std::string& prefix, const TensorVisitor& fn);
};

void visit(BatchNorm& bn, const std::string& prefix, const TensorVisitor& fn);

/// relu(bn(conv(x)))
struct ConvBnRelu {
  ConvLayer conv;
  BatchNorm bn;

  static ConvBnRelu create(const ConvSpec& spec, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode, const BnOptions& options);
  void visit(const std::string& prefix, const TensorVisitor& fn);
};

}  // namespace dgiqa
