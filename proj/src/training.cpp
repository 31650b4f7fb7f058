// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "dgiqa/errors.hpp"
#include "dgiqa/metrics.hpp"

namespace dgiqa {

namespace {

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(Model& model) {
  Snapshot s;
  for (auto& [name, t] : model.tensors()) s.emplace_back(t.values().begin(), t.values().end());
  return s;
}

void restore(Model& model, const Snapshot& s) {
  auto tensors = model.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    std::copy(s[i].begin(), s[i].end(), tensors[i].second.mutable_values().begin());
  }
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

std::size_t TrainConfig::effective_t_max() const {
  const std::size_t t = t_max ? t_max : epochs / 2;
  return std::max<std::size_t>(1, t);
}

void TrainConfig::validate() const {
  if (!(lambda_cl >= 0.0)) throw std::invalid_argument("train: lambda must be >= 0");
  if (!(lr_min < lr0)) throw std::invalid_argument("train: lr_min must be below lr0");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (crop_h == 0 || crop_w == 0) throw std::invalid_argument("train: crop size must be positive");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw std::invalid_argument("train: flip_prob must lie in [0, 1]");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw std::invalid_argument("train: split ratio must lie in (0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight_decay must be >= 0");
}

Tensor mse_loss(const Tensor& predicted, const Tensor& truth) {
  if (predicted.numel() != truth.numel()) throw DimensionError("mse_loss: batch sizes differ");
  return mean(square(sub(reshape(predicted, {predicted.numel()}), reshape(truth, {truth.numel()}))));
}

Tensor consistency_loss(const Tensor& predicted, const Tensor& predicted_flip) {
  if (predicted.numel() != predicted_flip.numel()) throw DimensionError("consistency_loss: batch sizes differ");
  return mse_loss(predicted, predicted_flip);
}

Tensor total_loss(const Tensor& mse, const Tensor& cl, double lambda) { return add(mse, scale(cl, lambda)); }

void adamw_step(std::span<NamedTensor> params, AdamWState& state, const AdamWOptions& o, double lr) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].second.numel(), 0.0);
      state.v[i].assign(params[i].second.numel(), 0.0);
    }
  }
  for (auto& [name, p] : params) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].second;
    auto g = p.grad();
    auto w = p.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= lr * (m_hat / (std::sqrt(v_hat) + o.eps)) + lr * o.weight_decay * w[j];
    }
  }
}

double cosine_lr(std::size_t epoch, const TrainConfig& config) {
  const std::size_t t_max = config.effective_t_max();
  if (epoch >= t_max) return config.lr_min;
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(t_max);
  return config.lr_min + 0.5 * (config.lr0 - config.lr_min) * (1.0 + std::cos(phase));
}

Augmented augment(const RgbdImage& image, const TrainConfig& config, Rng& rng) {
  if (image.height() < config.crop_h || image.width() < config.crop_w) {
    throw DimensionError("augment: image " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                         " is smaller than the crop; pad it first");
  }
  std::uniform_int_distribution<std::size_t> top_dist(0, image.height() - config.crop_h);
  std::uniform_int_distribution<std::size_t> left_dist(0, image.width() - config.crop_w);
  std::bernoulli_distribution flip(config.flip_prob);
  Augmented a;
  a.top = top_dist(rng);
  a.left = left_dist(rng);
  a.flipped_h = flip(rng);
  a.flipped_v = config.vertical_flip && flip(rng);
  NoGradGuard no_grad;
  a.image = crop_pair(image, a.top, a.left, config.crop_h, config.crop_w);
  if (a.flipped_h) a.image = RgbdImage{flip_horizontal(a.image.rgb), flip_horizontal(a.image.depth)};
  if (a.flipped_v) a.image = RgbdImage{flip_vertical(a.image.rgb), flip_vertical(a.image.depth)};
  return a;
}

SplitPlan make_split(std::size_t n, double ratio, std::uint64_t seed, std::span<const std::string> groups) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("make_split: ratio must lie in (0, 1)");
  if (!groups.empty() && groups.size() != n) throw DimensionError("make_split: group list length differs from n");
  SplitPlan plan;
  plan.seed = seed;
  Rng rng(seed);
  const std::size_t target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));

  const bool grouped = !groups.empty() && std::any_of(groups.begin(), groups.end(), [](const std::string& g) { return !g.empty(); });
  if (!grouped) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    plan.train.assign(order.begin(), order.begin() + static_cast<long>(target));
    plan.test.assign(order.begin() + static_cast<long>(target), order.end());
  } else {
    // Ungrouped records (empty id) form singleton groups.
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < n; ++i) members[groups[i].empty() ? "\x01#" + std::to_string(i) : groups[i]].push_back(i);
    std::vector<const std::vector<std::size_t>*> buckets;
    for (const auto& [key, idx] : members) buckets.push_back(&idx);
    std::shuffle(buckets.begin(), buckets.end(), rng);
    for (const auto* bucket : buckets) {
      auto& side = plan.train.size() + bucket->size() <= target ? plan.train : plan.test;
      side.insert(side.end(), bucket->begin(), bucket->end());
    }
  }
  std::sort(plan.train.begin(), plan.train.end());
  std::sort(plan.test.begin(), plan.test.end());
  return plan;
}

std::vector<SplitPlan> make_splits(std::size_t n, double ratio, std::span<const std::uint64_t> seeds,
                                   std::span<const std::string> groups) {
  std::vector<SplitPlan> plans;
  for (std::uint64_t s : seeds) plans.push_back(make_split(n, ratio, s, groups));
  return plans;
}

std::string to_json_line(const EpochLog& log) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j{{"epoch", log.epoch},           {"lr", log.lr},
                   {"train_loss", num(log.train_loss)}, {"val_srocc", num(log.val_srocc)},
                   {"val_plcc", num(log.val_plcc)},   {"train_mse", num(log.train_mse)},
                   {"train_cl", num(log.train_cl)}};
  return j.dump();
}

std::vector<double> predict_center(Model& model, std::span<const Sample> samples, std::size_t crop_h, std::size_t crop_w) {
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(samples.size());
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    std::vector<RgbdImage> batch;
    for (std::size_t i = start; i < std::min(samples.size(), start + kChunk); ++i) {
      batch.push_back(center_crop(samples[i].image, crop_h, crop_w));
    }
    Tensor s = model.score(stack(batch), Mode::kEval);
    out.insert(out.end(), s.values().begin(), s.values().end());
  }
  return out;
}

TrainResult train(Model& model, const TrainConfig& config, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  TrainResult result;
  result.best_srocc = -std::numeric_limits<double>::infinity();
  if (config.epochs == 0 || train_set.empty()) return result;

  Rng rng(config.seed);
  AdamWState state;
  const AdamWOptions adam{config.beta1, config.beta2, config.adam_eps, config.weight_decay};
  auto params = model.parameters();
  Snapshot last_good = snapshot(model);
  Snapshot best;

  std::vector<double> val_truth;
  for (const Sample& s : val_set) val_truth.push_back(s.score);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.lr = cosine_lr(epoch, config);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, mse_sum = 0.0, cl_sum = 0.0;
    std::size_t batches = 0;

    try {
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t end = std::min(order.size(), start + config.batch_size);
        // Batch statistics at the coarsest stage need at least two values.
        if ((end - start) * (config.crop_h / 32) * (config.crop_w / 32) < 2) break;
        std::vector<RgbdImage> crops;
        std::vector<double> targets;
        for (std::size_t i = start; i < end; ++i) {
          crops.push_back(augment(train_set[order[i]].image, config, rng).image);
          targets.push_back(train_set[order[i]].score);
        }
        RgbdImage batch = stack(crops);
        RgbdImage flipped{flip_horizontal(batch.rgb), flip_horizontal(batch.depth)};
        Tensor truth({targets.size()}, targets);

        Tensor q = model.score(batch, Mode::kTrain);
        Tensor q_flip = model.score(flipped, Mode::kTrain);
        Tensor mse = mse_loss(q, truth);
        Tensor cl = consistency_loss(q, q_flip);
        Tensor loss = total_loss(mse, cl, config.lambda_cl);
        if (!std::isfinite(loss.item())) {
          throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
        }
        model.zero_grad();
        loss.backward();
        adamw_step(params, state, adam, log.lr);
        loss_sum += loss.item();
        mse_sum += mse.item();
        cl_sum += cl.item();
        ++batches;
      }
    } catch (const NumericError&) {
      restore(model, last_good);
      model.zero_grad();
      throw;
    }
    model.zero_grad();

    log.train_loss = batches ? loss_sum / static_cast<double>(batches) : nan();
    log.train_mse = batches ? mse_sum / static_cast<double>(batches) : nan();
    log.train_cl = batches ? cl_sum / static_cast<double>(batches) : nan();
    log.val_srocc = nan();
    log.val_plcc = nan();
    if (val_set.size() >= 2) {
      const std::vector<double> pred = predict_center(model, val_set, config.crop_h, config.crop_w);
      try {
        log.val_srocc = srocc(pred, val_truth);
        log.val_plcc = plcc(pred, val_truth);
      } catch (const DegenerateError&) {
      }
    }
    last_good = snapshot(model);
    if (std::isfinite(log.val_srocc) && log.val_srocc > result.best_srocc) {
      result.best_srocc = log.val_srocc;
      result.best_epoch = epoch;
      if (config.keep_best) best = last_good;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (config.keep_best && !best.empty()) restore(model, best);
  result.optimizer = std::move(state);
  return result;
}

}  // namespace dgiqa
