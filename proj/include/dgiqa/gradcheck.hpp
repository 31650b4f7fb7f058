// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checks. The checked scalar is
// sum(f(inputs) * R) for a fixed random R, so every output coordinate
// contributes. Coordinates whose +/- perturbation changes any relu sign are
// skipped: the derivative is not defined across the kink.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dgiqa/layers.hpp"
#include "dgiqa/tensor.hpp"

namespace dgiqa {

struct GradCheckOptions {
  double step = 3e-5;
  double tolerance = 1e-4;
  /// Relative error is |a - n| / max(|a|, |n|, floor * max(1, sum|f * R|)).
  double floor = 1e-6;
  /// Coordinates sampled per input tensor (all of them if the tensor is smaller).
  std::size_t coords_per_tensor = 16;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = true;
};

using GradFn = std::function<Tensor()>;

/// `inputs` are leaves with requires_grad; `fn` must read them on every call.
GradCheckResult check_gradients(const std::string& name, const GradFn& fn, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options, Rng& rng);

struct GradCheckCase {
  GradFn fn;
  std::vector<Tensor> inputs;
};

/// Builds a fresh random instance of one check.
using GradCheckFactory = std::function<GradCheckCase(Rng&)>;

struct NamedFactory {
  std::string name;
  GradCheckFactory make;
};

/// Every differentiable op, each network block, and the composed toy model
/// (64x64 input, base_channels 8, 2 heads).
std::vector<NamedFactory> gradcheck_suite();

struct SuiteReport {
  std::vector<GradCheckResult> results;  // one per factory, aggregated over instances
  std::size_t instances = 0;
  bool passed() const;
  double max_rel_error() const;
};

SuiteReport run_gradcheck_suite(std::uint64_t seed, std::size_t instances, const GradCheckOptions& options = {},
                                const std::function<void(const GradCheckResult&)>& on_result = {});

}  // namespace dgiqa
