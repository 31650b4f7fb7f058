// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "dgiqa/errors.hpp"

namespace dgiqa {

namespace {

void check_pairs(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("score pairs: " + std::to_string(a.size()) + " predictions vs " + std::to_string(b.size()) +
                         " ground-truth scores");
  }
  if (a.size() < 2) throw DegenerateError("score pairs: need at least 2 samples");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isnan(a[i]) || std::isnan(b[i])) throw DataError("score pairs: NaN at index " + std::to_string(i));
  }
}

std::pair<double, double> mean_std(std::span<const double> v) {
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return {mu, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

double normal_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

double plcc(std::span<const double> predicted, std::span<const double> truth) {
  check_pairs(predicted, truth);
  const double n = static_cast<double>(predicted.size());
  const double mp = std::accumulate(predicted.begin(), predicted.end(), 0.0) / n;
  const double mt = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
  double cov = 0.0, vp = 0.0, vt = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double dp = predicted[i] - mp, dt = truth[i] - mt;
    cov += dp * dt;
    vp += dp * dp;
    vt += dt * dt;
  }
  if (vp == 0.0 || vt == 0.0) throw DegenerateError("plcc: a sequence has zero variance");
  return std::clamp(cov / (std::sqrt(vp) * std::sqrt(vt)), -1.0, 1.0);
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double srocc(std::span<const double> predicted, std::span<const double> truth) {
  check_pairs(predicted, truth);
  const std::vector<double> rp = fractional_ranks(predicted);
  const std::vector<double> rt = fractional_ranks(truth);
  return plcc(rp, rt);
}

double gaussian_overlap(double mu_a, double sigma_a, double mu_b, double sigma_b, const DensityOptions& options) {
  const double lo = std::min(mu_a - options.sigma_span * sigma_a, mu_b - options.sigma_span * sigma_b);
  const double hi = std::max(mu_a + options.sigma_span * sigma_a, mu_b + options.sigma_span * sigma_b);
  const double h = (hi - lo) / static_cast<double>(options.steps);
  double total = 0.0;
  for (std::size_t i = 0; i <= options.steps; ++i) {
    const double x = lo + h * static_cast<double>(i);
    const double f = std::min(normal_pdf(x, mu_a, sigma_a), normal_pdf(x, mu_b, sigma_b));
    total += (i == 0 || i == options.steps) ? 0.5 * f : f;
  }
  return std::clamp(total * h, 0.0, 1.0);
}

DensityReport density_separation(std::span<const double> scores_hi, std::span<const double> scores_lo,
                                 const DensityOptions& options) {
  if (scores_hi.size() < 2 || scores_lo.size() < 2) {
    throw DegenerateError("density_separation: each group needs at least 2 scores");
  }
  DensityReport r;
  std::tie(r.mu_hi, r.sigma_hi) = mean_std(scores_hi);
  std::tie(r.mu_lo, r.sigma_lo) = mean_std(scores_lo);
  if (r.sigma_hi == 0.0 || r.sigma_lo == 0.0) {
    r.degenerate = true;
    r.overlap = r.mu_hi == r.mu_lo ? 1.0 : 0.0;
    return r;
  }
  r.overlap = gaussian_overlap(r.mu_hi, r.sigma_hi, r.mu_lo, r.sigma_lo, options);
  return r;
}

}  // namespace dgiqa
