// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives over dgiqa::Tensor. Image tensors are NCHW.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dgiqa/tensor.hpp"

namespace dgiqa {

enum class Mode { kTrain, kEval };

struct ConvSpec {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  static ConvSpec square(std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1,
                         std::size_t padding = 0, std::size_t dilation = 1) {
    return ConvSpec{k, k, stride, padding, dilation, in, out};
  }

  /// floor((size + 2p - d(k-1) - 1) / s) + 1; throws if the result is < 1.
  std::size_t output_size(std::size_t size, std::size_t kernel) const;
  std::size_t output_h(std::size_t h) const { return output_size(h, kernel_h); }
  std::size_t output_w(std::size_t w) const { return output_size(w, kernel_w); }
};

struct BnOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Per-channel affine parameters plus running statistics (buffers, no grad).
struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;

  static BatchNorm create(std::size_t channels);
  std::size_t channels() const { return gamma.numel(); }
};

// Elementwise, same-shape operands.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor square(const Tensor& a);

// Reductions to a shape-[1] scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
/// Swaps the two trailing axes.
Tensor transpose_last(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// Batched contraction [..., m, k] x [..., k, n] -> [..., m, n]; leading axes
/// broadcast numpy-style (a missing axis or size 1 broadcasts).
Tensor matmul(const Tensor& a, const Tensor& b);

/// x [N, in] with weight [out, in] and optional bias [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// x [N,C,H,W], w [C_out,C,k_h,k_w], optional bias [C_out].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& spec);
Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b);

/// Train mode normalises over (N,H,W) and updates bn's running stats in place;
/// eval mode applies the running stats.
Tensor batchnorm2d(const Tensor& x, BatchNorm& bn, Mode mode, const BnOptions& options = {});

/// Normalises the trailing axis; gamma/beta have the trailing axis' size.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);
/// Non-overlapping block average to (h, w); source dims must be integer multiples.
Tensor resize_avg(const Tensor& x, std::size_t h, std::size_t w);
/// Nearest-neighbour upsampling by integer factors.
Tensor upsample_nearest(const Tensor& x, std::size_t h, std::size_t w);
Tensor flip_horizontal(const Tensor& x);
Tensor flip_vertical(const Tensor& x);
/// Spatial window [top, top+h) x [left, left+w) of an NCHW tensor.
Tensor crop(const Tensor& x, std::size_t top, std::size_t left, std::size_t h, std::size_t w);

namespace detail {

/// Records the sign pattern of every relu input while installed, so a
/// finite-difference probe can tell when a perturbation crosses a kink.
class KinkProbe {
 public:
  KinkProbe();
  ~KinkProbe();
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  void reset() { hash_ = 1469598103934665603ULL; }
  std::uint64_t signature() const { return hash_; }
  void record(bool positive) {
    hash_ ^= positive ? 0x9e3779b97f4a7c15ULL : 0x7f4a7c159e3779b9ULL;
    hash_ *= 1099511628211ULL;
  }
  static KinkProbe* active();

 private:
  std::uint64_t hash_ = 1469598103934665603ULL;
  KinkProbe* previous_;
};

}  // namespace detail

}  // namespace dgiqa
