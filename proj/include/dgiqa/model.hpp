// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end model: RGB and depth backbones -> per-stage TCB blocks ->
// token alignment -> depth-guided cross-attention + self-attention refinement
// -> dilated stack -> score. Also hosts the inference-time protocols that need
// the whole model (multi-crop scoring, Grad-CAM, full-reference scoring).

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dgiqa/backbone.hpp"
#include "dgiqa/depth_car.hpp"
#include "dgiqa/head.hpp"
#include "dgiqa/tcb.hpp"

namespace dgiqa {

enum class Ablation { kNone, kTcb, kDepthCar, kDilation };

Ablation parse_ablation(const std::string& name);
std::string to_string(Ablation ablation);

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t tcb_base_channels = 8;  // C'_1; C'_i doubles per stage
  std::size_t reduction = 16;
  std::size_t heads = 4;
  std::size_t head_channels = 0;  // D_head; 0 means D_model
  bool residual = true;
  bool layer_norm = false;
  bool refine_mlp = false;
  bool swap_modalities = false;
  bool use_tcb = true;
  bool use_depth_car = true;
  bool use_dilation = true;
  BnOptions bn;

  /// Desk-scale defaults: 64x64 input, C=(12,24,48,96) -> C'=(8,16,32,64).
  static ModelConfig toy();
  /// Full-scale channel geometry: 224x224, C=(96,...,768) -> C'=(64,...,512).
  static ModelConfig full_scale();

  std::size_t backbone_channels(std::size_t stage) const { return backbone.stage_channels(stage); }
  std::size_t tcb_channels(std::size_t stage) const { return tcb_base_channels << stage; }
  /// Channels entering fusion from `stage` (C' with TCB, C without).
  std::size_t fused_channels(std::size_t stage) const;
  std::size_t model_dim() const;
  std::size_t head_dim() const { return head_channels ? head_channels : model_dim(); }
  TcbShape tcb_shape(std::size_t stage) const;
  DepthCarConfig depth_car_config() const;
  HeadConfig head_config() const;

  /// Throws DimensionError on inconsistent geometry.
  void validate() const;
};

ModelConfig with_ablation(ModelConfig config, Ablation ablation);

struct ParamReport {
  std::size_t rgb_backbone = 0;
  std::size_t depth_backbone = 0;
  std::size_t rgb_tcb = 0;
  std::size_t depth_tcb = 0;
  std::size_t depth_car = 0;
  std::size_t head = 0;
  std::size_t total() const { return rgb_backbone + depth_backbone + rgb_tcb + depth_tcb + depth_car + head; }
};

/// Closed-form learnable-scalar counts; allocates nothing.
ParamReport count_params(const ModelConfig& config);

/// One image with its aligned depth map, each [1, C, H, W].
struct RgbdImage {
  Tensor rgb;
  Tensor depth;

  std::size_t height() const { return rgb.shape()[2]; }
  std::size_t width() const { return rgb.shape()[3]; }
};

RgbdImage crop_pair(const RgbdImage& image, std::size_t top, std::size_t left, std::size_t h, std::size_t w);
RgbdImage center_crop(const RgbdImage& image, std::size_t h, std::size_t w);
/// Concatenates single images along the batch axis.
RgbdImage stack(const std::vector<RgbdImage>& images);

struct ForwardResult {
  Tensor score;    // [N]
  Tensor dilated;  // [N, D_head, h4, w4]
};

using NamedTensor = std::pair<std::string, Tensor>;

class Model {
 public:
  static Model create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  ForwardResult forward(const RgbdImage& batch, Mode mode);
  Tensor score(const RgbdImage& batch, Mode mode) { return forward(batch, mode).score; }
  /// Dilated-stack features only (shared by the full-reference path).
  Tensor features(const RgbdImage& batch, Mode mode);
  const HeadParams& head() const { return head_; }
  HeadParams& head() { return head_; }

  /// Every tensor, learnable and buffers, in canonical order.
  void visit(const TensorVisitor& fn);
  std::vector<NamedTensor> tensors();
  /// Learnable tensors only (requires_grad).
  std::vector<NamedTensor> parameters();
  /// Enumerated learnable-scalar count.
  std::size_t parameter_count();
  void zero_grad();

  /// Deep copy of configuration and all tensor values.
  Model clone();
  /// Copies tensor values from a model with the same configuration.
  void copy_from(Model& other);

 private:
  ModelConfig config_;
  BackboneParams rgb_;
  BackboneParams depth_;
  std::vector<TcbParams> rgb_tcb_;
  std::vector<TcbParams> depth_tcb_;
  std::optional<DepthCarParams> fusion_;
  HeadParams head_;
};

/// Mean of single-crop predictions over `n_crops` uniformly random windows of
/// `crop_h x crop_w`, shared between RGB and depth. Deterministic per seed.
double multi_crop_score(Model& model, const RgbdImage& image, std::size_t n_crops, std::size_t crop_h,
                        std::size_t crop_w, std::uint64_t seed);

struct GradCam {
  Tensor heatmap;  // [H, W] in [0, 1], nearest-upsampled to the input size
  bool degenerate = false;
};

/// Grad-CAM from the dilated stack: channel weights are the spatial mean of
/// d score / d features; heatmap = minmax(relu(sum_c w_c F_c)). The image is
/// center-cropped to the model input size when larger.
GradCam grad_cam(Model& model, const RgbdImage& image);

/// Full-reference score from shared-weight features of a reference and a
/// distorted image (both center-cropped to the model input size).
double fr_score(Model& model, const RgbdImage& reference, const RgbdImage& distorted);

}  // namespace dgiqa
