// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// PNG raster I/O: 8-bit RGB images, 8/16-bit grayscale depth maps and
// heatmaps.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "dgiqa/model.hpp"
#include "dgiqa/tensor.hpp"

namespace dgiqa {

struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;   // 1 (gray) or 3 (RGB)
  std::size_t bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;  // row-major, interleaved channels
};

RawImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RawImage& image);

/// 8-bit 3-channel PNG -> [1, 3, H, W] scaled to [0, 1].
Tensor load_image(const std::filesystem::path& path);
/// 8- or 16-bit single-channel PNG -> [1, 1, H, W] divided by 255 or 65535.
Tensor load_depth(const std::filesystem::path& path);
RgbdImage load_pair(const std::filesystem::path& rgb_path, const std::filesystem::path& depth_path);

/// [1,3,H,W] or [3,H,W] in [0,1] -> 8-bit RGB (rounded, clamped).
void save_rgb(const std::filesystem::path& path, const Tensor& rgb);
/// Any tensor whose trailing axes are H, W with one plane -> grayscale.
void save_gray(const std::filesystem::path& path, const Tensor& plane, std::size_t bit_depth = 8);

}  // namespace dgiqa
