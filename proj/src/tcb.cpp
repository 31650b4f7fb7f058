// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/tcb.hpp"

#include <algorithm>
#include <string>

#include "dgiqa/errors.hpp"

namespace dgiqa {

std::size_t TcbShape::squeezed() const { return std::max<std::size_t>(1, out_channels / std::max<std::size_t>(1, reduction)); }

TcbParams init_tcb(const TcbShape& shape, Rng& rng) {
  const std::size_t c = shape.in_channels, cp = shape.out_channels, cpp = shape.squeezed();
  TcbParams p;
  p.shape = shape;
  p.proj = ConvLayer::create(ConvSpec::square(c, cp, 1), rng);
  p.squeeze = ConvLayer::create(ConvSpec::square(cp, cpp, 1), rng);
  p.excite = ConvLayer::create(ConvSpec::square(cpp, cp, 1), rng);
  p.local = ConvLayer::create(ConvSpec::square(cp, cp, 3, 1, 1), rng);
  p.bn = BatchNorm::create(cp);
  return p;
}

void TcbParams::visit(const std::string& prefix, const TensorVisitor& fn) {
  proj.visit(prefix + ".proj", fn);
  squeeze.visit(prefix + ".squeeze", fn);
  excite.visit(prefix + ".excite", fn);
  local.visit(prefix + ".local", fn);
  dgiqa::visit(bn, prefix + ".bn", fn);
}

Tensor tcb_forward(const Tensor& f_in, TcbParams& params, Mode mode, const BnOptions& bn, Tensor* attention) {
  if (f_in.rank() != 4 || f_in.shape()[1] != params.shape.in_channels) {
    throw DimensionError("tcb_forward: channel axis (1) of " + shape_str(f_in.shape()) + " must equal C=" +
                         std::to_string(params.shape.in_channels));
  }
  Tensor x = params.proj(f_in);
  Tensor a = sigmoid(params.excite(relu(params.squeeze(x))));
  if (attention) *attention = a;
  return relu(batchnorm2d(params.local(mul(x, a)), params.bn, mode, bn));
}

std::size_t tcb_param_count(const TcbShape& shape) {
  const std::size_t c = shape.in_channels, cp = shape.out_channels, cpp = shape.squeezed();
  return (c * cp + cp) + (cp * cpp + cpp) + (cpp * cp + cp) + (9 * cp * cp + cp) + 2 * cp;
}

}  // namespace dgiqa
