// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "dgiqa/errors.hpp"
#include "dgiqa/model.hpp"
#include "dgiqa/ops.hpp"
#include "test_util.hpp"

namespace dgiqa {
namespace {

using testing::uniform;

RgbdImage random_image(std::size_t h, std::size_t w, Rng& rng) {
  return {uniform({1, 3, h, w}, rng), uniform({1, 1, h, w}, rng)};
}

TEST(MultiCrop, SingleCropOfExactSizeEqualsPredict) {
  Rng rng(1);
  Model m = Model::create(ModelConfig::toy(), 1);
  RgbdImage im = random_image(64, 64, rng);
  NoGradGuard guard;
  EXPECT_DOUBLE_EQ(multi_crop_score(m, im, 1, 64, 64, 9), m.score(im, Mode::kEval).item());
}

TEST(MultiCrop, ConstantModelGivesConstant) {
  Rng rng(2);
  Model m = Model::create(ModelConfig::toy(), 2);
  for (double& v : m.head().fc_weight.mutable_values()) v = 0.0;
  m.head().fc_bias.mutable_values()[0] = -0.4;
  RgbdImage im = random_image(80, 80, rng);
  const double expect = 1.0 / (1.0 + std::exp(0.4));
  for (std::size_t n : {1u, 3u, 25u}) EXPECT_NEAR(multi_crop_score(m, im, n, 64, 64, n), expect, 1e-15);
}

TEST(MultiCrop, SeededAndSeedSensitive) {
  Rng rng(3);
  Model m = Model::create(ModelConfig::toy(), 3);
  RgbdImage im = random_image(96, 96, rng);
  const double a = multi_crop_score(m, im, 5, 64, 64, 11);
  EXPECT_EQ(a, multi_crop_score(m, im, 5, 64, 64, 11));
  EXPECT_NE(a, multi_crop_score(m, im, 5, 64, 64, 12));
}

TEST(MultiCrop, MatchesManualAverageOverChunks) {
  Rng rng(4);
  Model m = Model::create(ModelConfig::toy(), 4);
  RgbdImage im = random_image(64, 64, rng);
  // 40 crops span two evaluation chunks; all windows coincide here.
  NoGradGuard guard;
  EXPECT_NEAR(multi_crop_score(m, im, 40, 64, 64, 1), m.score(im, Mode::kEval).item(), 1e-15);
}

TEST(MultiCrop, SmallImageAsksForPadding) {
  Rng rng(5);
  Model m = Model::create(ModelConfig::toy(), 5);
  try {
    multi_crop_score(m, random_image(48, 64, rng), 25, 64, 64, 0);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos);
  }
  EXPECT_THROW(center_crop(random_image(48, 64, rng), 64, 64), DimensionError);
}

TEST(GradCam, NormalisedHeatmap) {
  Rng rng(6);
  Model m = Model::create(ModelConfig::toy(), 6);
  GradCam cam = grad_cam(m, random_image(80, 80, rng));
  ASSERT_EQ(cam.heatmap.shape(), (Shape{64, 64}));
  if (!cam.degenerate) {
    double lo = 1.0, hi = 0.0;
    for (double v : cam.heatmap.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    EXPECT_EQ(hi, 1.0);
    EXPECT_GE(lo, 0.0);
  }
  for (auto& [name, t] : m.parameters()) {
    for (double g : t.grad()) ASSERT_EQ(g, 0.0) << name;
  }
}

TEST(GradCam, InputIgnoringModelIsDegenerate) {
  Rng rng(7);
  Model m = Model::create(ModelConfig::toy(), 7);
  for (double& v : m.head().fc_weight.mutable_values()) v = 0.0;
  GradCam cam = grad_cam(m, random_image(64, 64, rng));
  EXPECT_TRUE(cam.degenerate);
  for (double v : cam.heatmap.values()) EXPECT_EQ(v, 0.0);
}

// One head channel: d q / d F = q(1-q) w / (hw), so the map is
// minmax(relu(q(1-q) w / hw * F)) upsampled by 32.
TEST(GradCam, SingleChannelOracle) {
  Rng rng(8);
  ModelConfig cfg = ModelConfig::toy();
  cfg.head_channels = 1;
  Model m = Model::create(cfg, 8);
  m.head().fc_weight.mutable_values()[0] = 1.5;
  RgbdImage im = random_image(64, 64, rng);
  ForwardResult ref;
  {
    NoGradGuard guard;
    ref = m.forward(im, Mode::kEval);
  }
  const double q = ref.score[0];
  const double alpha = q * (1.0 - q) * 1.5 / 4.0;
  std::vector<double> cam(4);
  for (std::size_t p = 0; p < 4; ++p) cam[p] = std::max(0.0, alpha * ref.dilated[p]);
  const auto [lo, hi] = std::minmax_element(cam.begin(), cam.end());
  GradCam out = grad_cam(m, im);
  if (*hi - *lo <= 0.0) {
    EXPECT_TRUE(out.degenerate);
    return;
  }
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      const double expect = (cam[(y / 32) * 2 + x / 32] - *lo) / (*hi - *lo);
      ASSERT_NEAR(out.heatmap[y * 64 + x], expect, 1e-12);
    }
}

TEST(FullReference, IdenticalPairGivesBiasScore) {
  Rng rng(9);
  Model m = Model::create(ModelConfig::toy(), 9);
  RgbdImage im = random_image(64, 64, rng);
  EXPECT_DOUBLE_EQ(fr_score(m, im, im), 1.0 / (1.0 + std::exp(-m.head().fc_bias[0])));
  RgbdImage other = random_image(64, 64, rng);
  const double a = fr_score(m, im, other);
  EXPECT_GT(a, 0.0);
  EXPECT_LT(a, 1.0);
}

}  // namespace
}  // namespace dgiqa
