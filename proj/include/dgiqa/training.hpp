// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Objective (MSE + lambda * flip-consistency), AdamW, cosine learning-rate
// schedule, RGB-D augmentation, split protocol and the training loop.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dgiqa/model.hpp"

namespace dgiqa {

struct TrainConfig {
  double lr0 = 1e-4;
  double lr_min = 1e-7;
  double weight_decay = 1e-2;
  std::size_t epochs = 200;
  std::size_t t_max = 0;  // 0 means epochs / 2
  std::size_t batch_size = 16;
  double lambda_cl = 0.3;
  std::size_t crop_h = 224;
  std::size_t crop_w = 224;
  double flip_prob = 0.5;
  bool vertical_flip = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double split_ratio = 0.8;
  bool keep_best = true;
  std::uint64_t seed = 0;

  std::size_t effective_t_max() const;
  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

/// One sample held in memory: image pair [1,C,H,W] and its score in [0, 1].
struct Sample {
  RgbdImage image;
  double score = 0.0;
  std::string group;
};

// --- losses ---------------------------------------------------------------

/// (1/N) sum (q - q_hat)^2
Tensor mse_loss(const Tensor& predicted, const Tensor& truth);
/// (1/N) sum (q_hat - q_hat_flip)^2
Tensor consistency_loss(const Tensor& predicted, const Tensor& predicted_flip);
/// mse + lambda * cl
Tensor total_loss(const Tensor& mse, const Tensor& cl, double lambda);

// --- optimisation ---------------------------------------------------------

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

struct AdamWState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Decoupled-weight-decay Adam step over `params` (their grad buffers are the
/// gradients): p -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * p.
/// Throws NumericError naming the first parameter with a non-finite gradient.
void adamw_step(std::span<NamedTensor> params, AdamWState& state, const AdamWOptions& options, double lr);

/// Cosine annealing from lr0 at t=0 to lr_min at t=T_max, then held at lr_min.
double cosine_lr(std::size_t epoch, const TrainConfig& config);

// --- data protocol --------------------------------------------------------

struct Augmented {
  RgbdImage image;
  std::size_t top = 0;
  std::size_t left = 0;
  bool flipped_h = false;
  bool flipped_v = false;
};

/// One random crop window and one flip decision per axis, applied identically
/// to RGB and depth.
Augmented augment(const RgbdImage& image, const TrainConfig& config, Rng& rng);

struct SplitPlan {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

/// Seeded 80:20-style partition of [0, n). With `groups`, whole groups go to
/// one side so no group appears in both.
SplitPlan make_split(std::size_t n, double ratio, std::uint64_t seed,
                     std::span<const std::string> groups = {});
std::vector<SplitPlan> make_splits(std::size_t n, double ratio, std::span<const std::uint64_t> seeds,
                                   std::span<const std::string> groups = {});

// --- loop -----------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_mse = 0.0;
  double train_cl = 0.0;
  double val_srocc = 0.0;
  double val_plcc = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_srocc = 0.0;
  AdamWState optimizer;  // state after the last step
};

std::string to_json_line(const EpochLog& log);

/// Single center-crop predictions in eval mode, in sample order.
std::vector<double> predict_center(Model& model, std::span<const Sample> samples, std::size_t crop_h, std::size_t crop_w);

/// Trains `model` in place. Validation uses a single center crop per sample.
/// With keep_best, the parameters of the best-validation-SROCC epoch are
/// restored at the end. A non-finite loss restores the last completed epoch's
/// parameters and throws NumericError.
TrainResult train(Model& model, const TrainConfig& config, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace dgiqa
