// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/model.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "dgiqa/errors.hpp"

namespace dgiqa {

Ablation parse_ablation(const std::string& name) {
  if (name.empty() || name == "none") return Ablation::kNone;
  if (name == "tcb") return Ablation::kTcb;
  if (name == "depthcar") return Ablation::kDepthCar;
  if (name == "dilation") return Ablation::kDilation;
  throw std::invalid_argument("unknown ablation '" + name + "' (expected tcb, depthcar or dilation)");
}

std::string to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::kTcb: return "tcb";
    case Ablation::kDepthCar: return "depthcar";
    case Ablation::kDilation: return "dilation";
    case Ablation::kNone: break;
  }
  return "none";
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.backbone = BackboneConfig{12, 64, 64, 1};
  c.tcb_base_channels = 8;
  c.heads = 4;
  return c;
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.backbone = BackboneConfig{96, 224, 224, 1};
  c.tcb_base_channels = 64;
  c.heads = 8;
  return c;
}

std::size_t ModelConfig::fused_channels(std::size_t stage) const {
  return use_tcb ? tcb_channels(stage) : backbone_channels(stage);
}

std::size_t ModelConfig::model_dim() const {
  std::size_t d = 0;
  for (std::size_t s = 0; s < kStages; ++s) d += fused_channels(s);
  return d;
}

TcbShape ModelConfig::tcb_shape(std::size_t stage) const {
  return TcbShape{backbone_channels(stage), tcb_channels(stage), reduction};
}

DepthCarConfig ModelConfig::depth_car_config() const {
  return DepthCarConfig{model_dim(), AttentionOptions{heads, residual, layer_norm}, refine_mlp, swap_modalities};
}

HeadConfig ModelConfig::head_config() const {
  const std::size_t rate_a = use_dilation ? 2 : 1;
  const std::size_t rate_b = use_dilation ? 4 : 1;
  return HeadConfig{model_dim(), head_dim(), rate_a, rate_b};
}

void ModelConfig::validate() const {
  check_backbone_input(backbone.input_h, backbone.input_w);
  if (backbone.base_channels == 0) throw DimensionError("model: base_channels must be positive");
  if (use_tcb && tcb_base_channels == 0) throw DimensionError("model: tcb_base_channels must be positive");
  if (use_depth_car && (heads == 0 || model_dim() % heads != 0)) {
    throw DimensionError("model: " + std::to_string(heads) + " heads do not divide D_model=" + std::to_string(model_dim()));
  }
}

ModelConfig with_ablation(ModelConfig config, Ablation ablation) {
  switch (ablation) {
    case Ablation::kTcb: config.use_tcb = false; break;
    case Ablation::kDepthCar: config.use_depth_car = false; break;
    case Ablation::kDilation: config.use_dilation = false; break;
    case Ablation::kNone: break;
  }
  return config;
}

ParamReport count_params(const ModelConfig& config) {
  config.validate();
  ParamReport r;
  r.rgb_backbone = backbone_param_count(config.backbone, 3);
  if (config.use_depth_car) r.depth_backbone = backbone_param_count(config.backbone, 1);
  if (config.use_tcb) {
    for (std::size_t s = 0; s < kStages; ++s) r.rgb_tcb += tcb_param_count(config.tcb_shape(s));
    if (config.use_depth_car) r.depth_tcb = r.rgb_tcb;
  }
  if (config.use_depth_car) r.depth_car = depth_car_param_count(config.depth_car_config());
  r.head = head_param_count(config.head_config());
  return r;
}

RgbdImage crop_pair(const RgbdImage& image, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  return RgbdImage{crop(image.rgb, top, left, h, w), crop(image.depth, top, left, h, w)};
}

RgbdImage center_crop(const RgbdImage& image, std::size_t h, std::size_t w) {
  if (image.height() < h || image.width() < w) {
    throw DimensionError("image " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                         " is smaller than the " + std::to_string(h) + "x" + std::to_string(w) + " crop; pad it first");
  }
  if (image.height() == h && image.width() == w) return image;
  return crop_pair(image, (image.height() - h) / 2, (image.width() - w) / 2, h, w);
}

RgbdImage stack(const std::vector<RgbdImage>& images) {
  if (images.size() == 1) return images.front();
  std::vector<Tensor> rgb, depth;
  for (const RgbdImage& im : images) {
    rgb.push_back(im.rgb);
    depth.push_back(im.depth);
  }
  return RgbdImage{concat(rgb, 0), concat(depth, 0)};
}

Model Model::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Model m;
  m.config_ = config;
  m.rgb_ = init_backbone(config.backbone, 3, rng);
  if (config.use_depth_car) m.depth_ = init_backbone(config.backbone, 1, rng);
  if (config.use_tcb) {
    for (std::size_t s = 0; s < kStages; ++s) m.rgb_tcb_.push_back(init_tcb(config.tcb_shape(s), rng));
    if (config.use_depth_car) {
      for (std::size_t s = 0; s < kStages; ++s) m.depth_tcb_.push_back(init_tcb(config.tcb_shape(s), rng));
    }
  }
  if (config.use_depth_car) m.fusion_ = init_depth_car(config.depth_car_config(), rng);
  m.head_ = init_head(config.head_config(), rng);
  return m;
}

Tensor Model::features(const RgbdImage& batch, Mode mode) {
  const BnOptions& bn = config_.bn;
  FeaturePyramid rgb = extract(batch.rgb, rgb_, mode, bn);
  if (config_.use_tcb) {
    for (std::size_t s = 0; s < kStages; ++s) rgb.stages[s] = tcb_forward(rgb.stages[s], rgb_tcb_[s], mode, bn);
  }
  TokenMap s_rgb = align_concat(rgb);
  Tensor fused;
  if (config_.use_depth_car) {
    if (batch.depth.shape()[0] != batch.rgb.shape()[0] || batch.depth.shape()[2] != batch.rgb.shape()[2] ||
        batch.depth.shape()[3] != batch.rgb.shape()[3]) {
      throw DimensionError("model: depth " + shape_str(batch.depth.shape()) + " is not aligned with rgb " +
                           shape_str(batch.rgb.shape()));
    }
    FeaturePyramid depth = extract(batch.depth, depth_, mode, bn);
    if (config_.use_tcb) {
      for (std::size_t s = 0; s < kStages; ++s) depth.stages[s] = tcb_forward(depth.stages[s], depth_tcb_[s], mode, bn);
    }
    fused = depth_car_forward(s_rgb, align_concat(depth), *fusion_, config_.depth_car_config());
  } else {
    fused = tokens_to_map(s_rgb);
  }
  return dilated_stack(fused, head_, mode, bn);
}

ForwardResult Model::forward(const RgbdImage& batch, Mode mode) {
  Tensor dilated = features(batch, mode);
  return ForwardResult{predict(dilated, head_), dilated};
}

void Model::visit(const TensorVisitor& fn) {
  rgb_.visit("rgb_backbone", fn);
  if (config_.use_depth_car) depth_.visit("depth_backbone", fn);
  for (std::size_t s = 0; s < rgb_tcb_.size(); ++s) rgb_tcb_[s].visit("rgb_tcb" + std::to_string(s + 1), fn);
  for (std::size_t s = 0; s < depth_tcb_.size(); ++s) depth_tcb_[s].visit("depth_tcb" + std::to_string(s + 1), fn);
  if (fusion_) fusion_->visit("depth_car", fn);
  head_.visit("head", fn);
}

std::vector<NamedTensor> Model::tensors() {
  std::vector<NamedTensor> out;
  visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::vector<NamedTensor> Model::parameters() {
  std::vector<NamedTensor> out;
  visit([&](const std::string& name, Tensor& t) {
    if (t.requires_grad()) out.emplace_back(name, t);
  });
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (auto& [name, t] : parameters()) n += t.numel();
  return n;
}

void Model::zero_grad() {
  visit([](const std::string&, Tensor& t) { t.zero_grad(); });
}

Model Model::clone() {
  Model copy = create(config_, 0);
  copy.copy_from(*this);
  return copy;
}

void Model::copy_from(Model& other) {
  auto dst = tensors();
  auto src = other.tensors();
  if (dst.size() != src.size()) throw DimensionError("copy_from: models have different layouts");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].first != src[i].first || dst[i].second.shape() != src[i].second.shape()) {
      throw DimensionError("copy_from: tensor " + dst[i].first + " does not match " + src[i].first);
    }
    auto from = src[i].second.values();
    std::copy(from.begin(), from.end(), dst[i].second.mutable_values().begin());
  }
}

double multi_crop_score(Model& model, const RgbdImage& image, std::size_t n_crops, std::size_t crop_h,
                        std::size_t crop_w, std::uint64_t seed) {
  if (n_crops == 0) throw std::invalid_argument("multi_crop_score: n_crops must be positive");
  if (image.height() < crop_h || image.width() < crop_w) {
    throw DimensionError("multi_crop_score: image " + std::to_string(image.height()) + "x" +
                         std::to_string(image.width()) + " is smaller than the " + std::to_string(crop_h) + "x" +
                         std::to_string(crop_w) + " crop; pad the image first");
  }
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> top_dist(0, image.height() - crop_h);
  std::uniform_int_distribution<std::size_t> left_dist(0, image.width() - crop_w);
  std::vector<RgbdImage> crops;
  crops.reserve(n_crops);
  for (std::size_t i = 0; i < n_crops; ++i) {
    const std::size_t top = top_dist(rng);
    const std::size_t left = left_dist(rng);
    crops.push_back(crop_pair(image, top, left, crop_h, crop_w));
  }
  NoGradGuard no_grad;
  constexpr std::size_t kChunk = 32;
  double total = 0.0;
  for (std::size_t start = 0; start < n_crops; start += kChunk) {
    const std::size_t end = std::min(n_crops, start + kChunk);
    std::vector<RgbdImage> chunk(crops.begin() + static_cast<long>(start), crops.begin() + static_cast<long>(end));
    Tensor scores = model.score(stack(chunk), Mode::kEval);
    for (double s : scores.values()) total += s;
  }
  return total / static_cast<double>(n_crops);
}

GradCam grad_cam(Model& model, const RgbdImage& image) {
  const ModelConfig& cfg = model.config();
  RgbdImage input = center_crop(image, cfg.backbone.input_h, cfg.backbone.input_w);
  ForwardResult fwd = model.forward(RgbdImage{input.rgb.detach(), input.depth.detach()}, Mode::kEval);
  sum(fwd.score).backward();
  const Tensor& feats = fwd.dilated;
  const std::size_t c = feats.shape()[1], h = feats.shape()[2], w = feats.shape()[3], hw = h * w;
  std::vector<double> cam(hw, 0.0);
  if (feats.requires_grad()) {
    auto g = feats.grad();
    auto f = feats.values();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double weight = 0.0;
      for (std::size_t p = 0; p < hw; ++p) weight += g[ch * hw + p];
      weight /= static_cast<double>(hw);
      for (std::size_t p = 0; p < hw; ++p) cam[p] += weight * f[ch * hw + p];
    }
  }
  model.zero_grad();
  for (double& v : cam) v = std::max(v, 0.0);
  const auto [lo, hi] = std::minmax_element(cam.begin(), cam.end());
  GradCam out;
  const double range = *hi - *lo;
  if (!(range > 0.0)) {
    out.degenerate = true;
    std::fill(cam.begin(), cam.end(), 0.0);
  } else {
    const double mn = *lo;
    for (double& v : cam) v = (v - mn) / range;
  }
  NoGradGuard no_grad;
  Tensor up = upsample_nearest(Tensor({1, 1, h, w}, std::move(cam)), input.height(), input.width());
  out.heatmap = reshape(up, {input.height(), input.width()});
  return out;
}

double fr_score(Model& model, const RgbdImage& reference, const RgbdImage& distorted) {
  const ModelConfig& cfg = model.config();
  NoGradGuard no_grad;
  Tensor f_ref = model.features(center_crop(reference, cfg.backbone.input_h, cfg.backbone.input_w), Mode::kEval);
  Tensor f_dist = model.features(center_crop(distorted, cfg.backbone.input_h, cfg.backbone.input_w), Mode::kEval);
  return fr_predict(f_ref, f_dist, model.head()).item();
}

}  // namespace dgiqa
