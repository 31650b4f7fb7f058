// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <set>

#include "dgiqa/errors.hpp"
#include "dgiqa/metrics.hpp"
#include "dgiqa/ops.hpp"
#include "dgiqa/synth.hpp"
#include "dgiqa/training.hpp"
#include "test_util.hpp"

namespace dgiqa {
namespace {

using testing::vec;

std::vector<double> flat_params(Model& m) {
  std::vector<double> v;
  for (auto& [name, t] : m.tensors()) v.insert(v.end(), t.values().begin(), t.values().end());
  return v;
}

TEST(Loss, MseExamples) {
  EXPECT_EQ(mse_loss(Tensor({3}, {0.1, 0.2, 0.3}), Tensor({3}, {0.1, 0.2, 0.3})).item(), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(Tensor({1}, {0.5}), Tensor({1}, {0.0})).item(), 0.25);
  Rng rng(1);
  Tensor a = testing::uniform({7}, rng), b = testing::uniform({7}, rng);
  double s = 0.0;
  for (std::size_t i = 0; i < 7; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(mse_loss(a, b).item(), s / 7.0, 1e-16);
}

TEST(Loss, ConsistencyExamples) {
  EXPECT_NEAR(consistency_loss(Tensor({3}, {0.1, 0.5, 0.9}), Tensor({3}, {0.15, 0.45, 0.95})).item(), 0.0025, 1e-15);
  // A horizontally symmetric image is its own flip, so any model scores it identically.
  std::vector<double> v(3 * 64 * 64), d(64 * 64);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) v[(c * 64 + y) * 64 + x] = std::abs(31.5 - static_cast<double>(x)) / 32.0 + 0.1 * c;
  RgbdImage im{Tensor({1, 3, 64, 64}, v), Tensor({1, 1, 64, 64}, d)};
  RgbdImage pair = stack({im, im});
  RgbdImage flipped{flip_horizontal(pair.rgb), flip_horizontal(pair.depth)};
  Model m = Model::create(ModelConfig::toy(), 1);
  EXPECT_EQ(consistency_loss(m.score(pair, Mode::kTrain), m.score(flipped, Mode::kTrain)).item(), 0.0);
}

TEST(Loss, TotalIsLinearInLambda) {
  Tensor mse = Tensor::scalar(0.02), cl = Tensor::scalar(0.01);
  EXPECT_DOUBLE_EQ(total_loss(mse, cl, 0.0).item(), 0.02);
  EXPECT_DOUBLE_EQ(total_loss(mse, cl, 0.3).item(), 0.02 + 0.3 * 0.01);
  EXPECT_DOUBLE_EQ(total_loss(mse, cl, 1.0).item(), 0.03);
  EXPECT_EQ(TrainConfig{}.lambda_cl, 0.3);
}

NamedTensor scalar_param(double value, double grad) {
  Tensor p({1}, {value}, true);
  p.mutable_grad()[0] = grad;
  return {"w", p};
}

TEST(AdamW, ScalarOracleFirstSteps) {
  const AdamWOptions o{0.9, 0.999, 1e-8, 0.01};
  std::vector<NamedTensor> ps{scalar_param(0.7, 0.3)};
  AdamWState st;
  const double lr = 1e-3;
  // Hand-rolled AdamW.
  double w = 0.7, m = 0.0, v = 0.0;
  const double grads[] = {0.3, -0.1, 0.25};
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    ps[0].second.mutable_grad()[0] = g;
    adamw_step(ps, st, o, lr);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    w = w - lr * mh / (std::sqrt(vh) + 1e-8) - lr * 0.01 * w;
    EXPECT_NEAR(ps[0].second[0], w, 1e-15) << "step " << t;
  }
  // From a zero state the first update is -lr * g / (|g| + eps).
  std::vector<NamedTensor> q{scalar_param(0.0, 0.3)};
  AdamWState s2;
  adamw_step(q, s2, {0.9, 0.999, 1e-8, 0.0}, lr);
  EXPECT_NEAR(q[0].second[0], -lr * 0.3 / (0.3 + 1e-8), 1e-18);
}

TEST(AdamW, ZeroGradient) {
  std::vector<NamedTensor> ps{scalar_param(2.0, 0.0)};
  AdamWState st;
  adamw_step(ps, st, {0.9, 0.999, 1e-8, 0.0}, 0.1);
  EXPECT_EQ(ps[0].second[0], 2.0);
  adamw_step(ps, st, {0.9, 0.999, 1e-8, 0.5}, 0.1);
  EXPECT_DOUBLE_EQ(ps[0].second[0], 2.0 * (1.0 - 0.1 * 0.5));
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
  std::vector<NamedTensor> ps{scalar_param(1.0, 0.0), {"head.fc.weight", Tensor({1}, {1.0}, true)}};
  ps[1].second.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  AdamWState st;
  try {
    adamw_step(ps, st, {}, 0.1);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("head.fc.weight"), std::string::npos);
  }
  EXPECT_EQ(ps[0].second[0], 1.0);
}

TEST(Schedule, CosineEndpoints) {
  TrainConfig c;
  c.lr0 = 1e-4;
  c.lr_min = 1e-7;
  c.epochs = 200;
  EXPECT_EQ(c.effective_t_max(), 100u);
  EXPECT_DOUBLE_EQ(cosine_lr(0, c), 1e-4);
  EXPECT_NEAR(cosine_lr(100, c), 1e-7, 1e-20);
  EXPECT_NEAR(cosine_lr(50, c), (1e-4 + 1e-7) / 2.0, 1e-18);
  EXPECT_EQ(cosine_lr(150, c), 1e-7);
  for (std::size_t t = 1; t <= 100; ++t) EXPECT_LE(cosine_lr(t, c), cosine_lr(t - 1, c));
}

RgbdImage coded_image(std::size_t h, std::size_t w) {
  // RGB channel 0 and depth carry the same position code.
  std::vector<double> rgb(3 * h * w), depth(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    rgb[i] = depth[i] = static_cast<double>(i) / static_cast<double>(h * w);
    rgb[h * w + i] = 0.5;
    rgb[2 * h * w + i] = 0.25;
  }
  return {Tensor({1, 3, h, w}, rgb), Tensor({1, 1, h, w}, depth)};
}

TEST(Augment, NoFlipIsPlainCrop) {
  TrainConfig c;
  c.crop_h = c.crop_w = 4;
  c.flip_prob = 0.0;
  Rng rng(2);
  RgbdImage im = coded_image(8, 8);
  for (int i = 0; i < 20; ++i) {
    Augmented a = augment(im, c, rng);
    EXPECT_FALSE(a.flipped_h || a.flipped_v);
    EXPECT_EQ(vec(a.image.rgb), vec(crop(im.rgb, a.top, a.left, 4, 4)));
  }
}

TEST(Augment, RgbAndDepthStayAligned) {
  TrainConfig c;
  c.crop_h = c.crop_w = 4;
  Rng rng(3);
  RgbdImage im = coded_image(9, 7);
  for (int i = 0; i < 1000; ++i) {
    Augmented a = augment(im, c, rng);
    for (std::size_t p = 0; p < 16; ++p) ASSERT_EQ(a.image.rgb[p], a.image.depth[p]);
  }
}

TEST(Augment, CornersUniform) {
  TrainConfig c;
  c.crop_h = c.crop_w = 4;
  Rng rng(4);
  RgbdImage im = coded_image(6, 6);  // 3x3 valid corners
  std::vector<double> counts(9, 0.0);
  const int draws = 9000;
  for (int i = 0; i < draws; ++i) {
    Augmented a = augment(im, c, rng);
    counts[a.top * 3 + a.left] += 1.0;
  }
  double chi2 = 0.0;
  for (double n : counts) chi2 += (n - draws / 9.0) * (n - draws / 9.0) / (draws / 9.0);
  EXPECT_LT(chi2, 20.09);  // chi-square 8 dof, p = 0.01
  EXPECT_THROW(augment(coded_image(3, 6), c, rng), DimensionError);
}

TEST(Split, SizesAndDeterminism) {
  SplitPlan p = make_split(10, 0.8, 7);
  EXPECT_EQ(p.train.size(), 8u);
  EXPECT_EQ(p.test.size(), 2u);
  SplitPlan q = make_split(10, 0.8, 7);
  EXPECT_EQ(p.train, q.train);
  std::set<std::size_t> all(p.train.begin(), p.train.end());
  all.insert(p.test.begin(), p.test.end());
  EXPECT_EQ(all.size(), 10u);
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  auto plans = make_splits(10, 0.8, seeds);
  ASSERT_EQ(plans.size(), 3u);
  EXPECT_TRUE(plans[0].train != plans[1].train || plans[1].train != plans[2].train);
}

TEST(Split, GroupDisjoint) {
  const std::vector<std::string> groups = {"a", "a", "a", "b", "b", "b", "c", "c", "c", "c"};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SplitPlan p = make_split(groups.size(), 0.8, seed, groups);
    std::set<std::string> train, test;
    for (std::size_t i : p.train) train.insert(groups[i]);
    for (std::size_t i : p.test) test.insert(groups[i]);
    for (const auto& g : train) EXPECT_FALSE(test.contains(g)) << "seed " << seed;
    EXPECT_EQ(p.train.size() + p.test.size(), groups.size());
  }
}

std::vector<Sample> tiny_set(std::size_t n, std::uint64_t seed) {
  SynthSpec spec;
  spec.image_size = 64;
  spec.levels = 5;
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    RgbdImage scene = render_scene(64, seed + i);
    const std::size_t level = i % 5;
    Rng rng(i);
    out.push_back({{distort(scene.rgb, Distortion::kGaussianBlur, level, spec, rng), scene.depth},
                   synth_score(level, 5), "g" + std::to_string(i)});
  }
  return out;
}

TEST(Train, ZeroEpochsLeavesParameters) {
  Model m = Model::create(ModelConfig::toy(), 1);
  const auto before = flat_params(m);
  TrainConfig c = TrainConfig{};
  c.epochs = 0;
  c.crop_h = c.crop_w = 64;
  auto set = tiny_set(4, 1);
  TrainResult r = train(m, c, set, {});
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(flat_params(m), before);
}

TEST(Train, SeededDeterminism) {
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 4;
  c.crop_h = c.crop_w = 64;
  c.lr0 = 1e-3;
  c.seed = 5;
  auto set = tiny_set(8, 2);
  Model a = Model::create(ModelConfig::toy(), 3), b = Model::create(ModelConfig::toy(), 3);
  TrainResult ra = train(a, c, set, set), rb = train(b, c, set, set);
  EXPECT_EQ(ra.log[0].train_loss, rb.log[0].train_loss);
  EXPECT_EQ(ra.log[0].val_srocc, rb.log[0].val_srocc);
  EXPECT_EQ(flat_params(a), flat_params(b));
  EXPECT_EQ(ra.optimizer.step, 2u);
}

TEST(Train, OverfitsSingleSample) {
  TrainConfig c;
  c.epochs = 500;
  c.batch_size = 1;
  c.crop_h = c.crop_w = 64;
  c.lr0 = 1e-3;
  c.lr_min = 1e-5;
  auto set = tiny_set(1, 3);
  set[0].score = 0.77;
  Model m = Model::create(ModelConfig::toy(), 4);
  TrainResult r = train(m, c, set, {});
  ASSERT_EQ(r.log.size(), 500u);
  double best = 1.0;
  for (const EpochLog& e : r.log) best = std::min(best, e.train_mse);
  EXPECT_LT(best, 1e-3);
}

TEST(Train, NonFiniteLossRestoresAndThrows) {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 4;
  c.crop_h = c.crop_w = 64;
  auto set = tiny_set(4, 4);
  set[2].image.rgb.mutable_values()[5] = std::numeric_limits<double>::quiet_NaN();
  Model m = Model::create(ModelConfig::toy(), 5);
  const auto before = flat_params(m);
  EXPECT_THROW(train(m, c, set, {}), NumericError);
  EXPECT_EQ(flat_params(m), before);
}

TEST(Train, KeepBestTracksBestEpoch) {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 4;
  c.crop_h = c.crop_w = 64;
  c.lr0 = 1e-3;
  auto set = tiny_set(10, 5);
  Model m = Model::create(ModelConfig::toy(), 6);
  TrainResult r = train(m, c, set, set);
  double best = -2.0;
  std::size_t at = 0;
  for (const EpochLog& e : r.log)
    if (e.val_srocc > best) best = e.val_srocc, at = e.epoch;
  EXPECT_EQ(r.best_epoch, at);
  EXPECT_EQ(r.best_srocc, best);
  // The restored model reproduces the best epoch's validation SROCC.
  std::vector<double> truth;
  for (const Sample& s : set) truth.push_back(s.score);
  EXPECT_DOUBLE_EQ(srocc(predict_center(m, set, 64, 64), truth), best);
}

TEST(Train, LogLineIsJson) {
  EpochLog e{3, 1e-4, 0.5, 0.4, 0.1, 0.9, 0.8};
  const std::string line = to_json_line(e);
  for (const char* key : {"\"epoch\":3", "\"lr\"", "\"train_loss\"", "\"val_srocc\"", "\"val_plcc\""})
    EXPECT_NE(line.find(key), std::string::npos) << key;
}

TEST(TrainConfig, RejectsBadValues) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lambda_cl = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace dgiqa
