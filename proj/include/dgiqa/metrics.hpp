// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Correlation metrics between predicted and ground-truth quality scores, and
// the density-separation criterion between two groups of predictions.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dgiqa {

/// Pearson linear correlation. Throws DegenerateError for N < 2 or a
/// zero-variance sequence, DimensionError for unequal lengths.
double plcc(std::span<const double> predicted, std::span<const double> truth);

/// Spearman rank-order correlation: Pearson correlation of fractional
/// (tie-averaged) ranks, which equals 1 - 6 sum d^2 / (N (N^2 - 1)) without ties.
double srocc(std::span<const double> predicted, std::span<const double> truth);

/// 1-based ranks; tied values share the mean of the ranks they span.
std::vector<double> fractional_ranks(std::span<const double> values);

struct DensityOptions {
  double sigma_span = 6.0;
  std::size_t steps = 10000;
};

struct DensityReport {
  double mu_hi = 0.0;
  double sigma_hi = 0.0;
  double mu_lo = 0.0;
  double sigma_lo = 0.0;
  double overlap = 0.0;
  bool degenerate = false;

  double separation_pct() const { return 100.0 * (1.0 - overlap); }
};

/// Fits a Gaussian (mean, unbiased std) to each group and integrates the
/// pointwise minimum of the two densities with the trapezoid rule.
DensityReport density_separation(std::span<const double> scores_hi, std::span<const double> scores_lo,
                                 const DensityOptions& options = {});

/// Overlapping coefficient of two Gaussians by trapezoid integration.
double gaussian_overlap(double mu_a, double sigma_a, double mu_b, double sigma_b, const DensityOptions& options = {});

}  // namespace dgiqa
