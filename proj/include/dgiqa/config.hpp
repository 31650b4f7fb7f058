// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration with "model" and "train" sections. Every key is
// optional; missing keys keep the toy defaults.
//
//   {"model": {"base_channels": 12, "tcb_base_channels": 8, "heads": 4, ...},
//    "train": {"lr0": 1e-3, "epochs": 60, "batch_size": 16, ...}}

#pragma once

#include <filesystem>
#include <string>

#include "dgiqa/model.hpp"
#include "dgiqa/training.hpp"

namespace dgiqa {

struct RunConfig {
  ModelConfig model = ModelConfig::toy();
  TrainConfig train = toy_train_config();

  /// Training settings used for the desk-scale synthetic runs.
  static TrainConfig toy_train_config();
};

/// Unknown keys are rejected so typos do not silently fall back to defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& config);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig parse_model_config(const std::string& json_text);

}  // namespace dgiqa
