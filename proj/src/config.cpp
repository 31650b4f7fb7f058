// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "dgiqa/errors.hpp"

namespace dgiqa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw DataError("config: '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw DataError("config: unknown key '" + section + "." + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

json model_json(const ModelConfig& m) {
  return {{"base_channels", m.backbone.base_channels},
          {"input_h", m.backbone.input_h},
          {"input_w", m.backbone.input_w},
          {"depth_blocks_per_stage", m.backbone.depth_blocks_per_stage},
          {"tcb_base_channels", m.tcb_base_channels},
          {"reduction", m.reduction},
          {"heads", m.heads},
          {"head_channels", m.head_channels},
          {"residual", m.residual},
          {"layer_norm", m.layer_norm},
          {"refine_mlp", m.refine_mlp},
          {"swap_modalities", m.swap_modalities},
          {"use_tcb", m.use_tcb},
          {"use_depth_car", m.use_depth_car},
          {"use_dilation", m.use_dilation},
          {"bn_eps", m.bn.eps},
          {"bn_momentum", m.bn.momentum}};
}

ModelConfig model_from_json(const json& j) {
  static const std::set<std::string> keys = {
      "base_channels", "input_h",    "input_w",    "depth_blocks_per_stage", "tcb_base_channels", "reduction",
      "heads",         "head_channels", "residual", "layer_norm",          "refine_mlp",        "swap_modalities",
      "use_tcb",       "use_depth_car", "use_dilation", "bn_eps",           "bn_momentum",       "preset"};
  check_keys(j, keys, "model");
  ModelConfig m = ModelConfig::toy();
  if (auto it = j.find("preset"); it != j.end()) {
    const std::string preset = it->get<std::string>();
    if (preset == "full_scale") {
      m = ModelConfig::full_scale();
    } else if (preset != "toy") {
      throw DataError("config: unknown model preset '" + preset + "' (toy, full_scale)");
    }
  }
  read(j, "base_channels", m.backbone.base_channels);
  read(j, "input_h", m.backbone.input_h);
  read(j, "input_w", m.backbone.input_w);
  read(j, "depth_blocks_per_stage", m.backbone.depth_blocks_per_stage);
  read(j, "tcb_base_channels", m.tcb_base_channels);
  read(j, "reduction", m.reduction);
  read(j, "heads", m.heads);
  read(j, "head_channels", m.head_channels);
  read(j, "residual", m.residual);
  read(j, "layer_norm", m.layer_norm);
  read(j, "refine_mlp", m.refine_mlp);
  read(j, "swap_modalities", m.swap_modalities);
  read(j, "use_tcb", m.use_tcb);
  read(j, "use_depth_car", m.use_depth_car);
  read(j, "use_dilation", m.use_dilation);
  read(j, "bn_eps", m.bn.eps);
  read(j, "bn_momentum", m.bn.momentum);
  m.validate();
  return m;
}

json train_json(const TrainConfig& t) {
  return {{"lr0", t.lr0},
          {"lr_min", t.lr_min},
          {"weight_decay", t.weight_decay},
          {"epochs", t.epochs},
          {"t_max", t.t_max},
          {"batch_size", t.batch_size},
          {"lambda_cl", t.lambda_cl},
          {"crop_h", t.crop_h},
          {"crop_w", t.crop_w},
          {"flip_prob", t.flip_prob},
          {"vertical_flip", t.vertical_flip},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"split_ratio", t.split_ratio},
          {"keep_best", t.keep_best},
          {"seed", t.seed}};
}

TrainConfig train_from_json(const json& j) {
  static const std::set<std::string> keys = {"lr0",   "lr_min",     "weight_decay", "epochs",    "t_max",
                                             "batch_size", "lambda_cl", "crop_h",  "crop_w",    "flip_prob",
                                             "vertical_flip", "beta1", "beta2",    "adam_eps",  "split_ratio",
                                             "keep_best", "seed"};
  check_keys(j, keys, "train");
  TrainConfig t = RunConfig::toy_train_config();
  read(j, "lr0", t.lr0);
  read(j, "lr_min", t.lr_min);
  read(j, "weight_decay", t.weight_decay);
  read(j, "epochs", t.epochs);
  read(j, "t_max", t.t_max);
  read(j, "batch_size", t.batch_size);
  read(j, "lambda_cl", t.lambda_cl);
  read(j, "crop_h", t.crop_h);
  read(j, "crop_w", t.crop_w);
  read(j, "flip_prob", t.flip_prob);
  read(j, "vertical_flip", t.vertical_flip);
  read(j, "beta1", t.beta1);
  read(j, "beta2", t.beta2);
  read(j, "adam_eps", t.adam_eps);
  read(j, "split_ratio", t.split_ratio);
  read(j, "keep_best", t.keep_best);
  read(j, "seed", t.seed);
  t.validate();
  return t;
}

json parse_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
}

template <typename Fn>
auto wrap(Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("config: ") + e.what());
  }
}

}  // namespace

TrainConfig RunConfig::toy_train_config() {
  TrainConfig t;
  t.lr0 = 2e-3;
  t.lr_min = 1e-5;
  t.epochs = 60;
  t.batch_size = 16;
  t.crop_h = 64;
  t.crop_w = 64;
  return t;
}

RunConfig parse_run_config(const std::string& json_text) {
  const json j = parse_text(json_text);
  return wrap([&] {
    check_keys(j, {"model", "train"}, "root");
    RunConfig c;
    if (j.contains("model")) c.model = model_from_json(j["model"]);
    if (j.contains("train")) c.train = train_from_json(j["train"]);
    // Crop defaults follow the model input size.
    const bool has_train = j.contains("train");
    if (!has_train || !j["train"].contains("crop_h")) c.train.crop_h = c.model.backbone.input_h;
    if (!has_train || !j["train"].contains("crop_w")) c.train.crop_w = c.model.backbone.input_w;
    if (c.train.crop_h != c.model.backbone.input_h || c.train.crop_w != c.model.backbone.input_w) {
      throw DataError("config: train crop " + std::to_string(c.train.crop_h) + "x" + std::to_string(c.train.crop_w) +
                      " differs from model input " + std::to_string(c.model.backbone.input_h) + "x" +
                      std::to_string(c.model.backbone.input_w));
    }
    return c;
  });
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& config) {
  return json{{"model", model_json(config.model)}, {"train", train_json(config.train)}}.dump(2);
}

void save_run_config(const fs::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write config '" + path.string() + "'");
  out << to_json(config) << '\n';
}

std::string model_config_to_json(const ModelConfig& config) { return model_json(config).dump(); }

ModelConfig parse_model_config(const std::string& json_text) {
  const json j = parse_text(json_text);
  return wrap([&] { return model_from_json(j); });
}

}  // namespace dgiqa
