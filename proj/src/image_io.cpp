// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "dgiqa/errors.hpp"

namespace dgiqa {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp, png_const_charp message) { throw DataError(std::string("png: ") + message); }
void png_warn(png_structp, png_const_charp) {}

std::uint16_t quantize(double v, double max_value) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * max_value));
}

}  // namespace

RawImage read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError("cannot open image '" + path.string() + "'");
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw DataError("'" + path.string() + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  RawImage img;
  try {
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_swap(png);  // native little-endian 16-bit samples
    png_read_update_info(png, info);

    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    img.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<png_byte> data(rowbytes * img.height);
    std::vector<png_bytep> rows(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = data.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);

    const std::size_t n = img.width * img.height * img.channels;
    img.samples.resize(n);
    if (img.bit_depth == 16) {
      for (std::size_t y = 0; y < img.height; ++y) {
        const auto* row = reinterpret_cast<const std::uint16_t*>(rows[y]);
        std::copy_n(row, img.width * img.channels, img.samples.begin() + static_cast<long>(y * img.width * img.channels));
      }
    } else {
      for (std::size_t y = 0; y < img.height; ++y) {
        std::copy_n(rows[y], img.width * img.channels, img.samples.begin() + static_cast<long>(y * img.width * img.channels));
      }
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::filesystem::path& path, const RawImage& img) {
  if (img.channels != 1 && img.channels != 3) throw DataError("write_png: only gray or RGB images are supported");
  if (img.bit_depth != 8 && img.bit_depth != 16) throw DataError("write_png: bit depth must be 8 or 16");
  if (img.samples.size() != img.width * img.height * img.channels) throw DataError("write_png: sample count mismatch");
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw DataError("cannot write image '" + path.string() + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 static_cast<int>(img.bit_depth), img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t per_row = img.width * img.channels;
    std::vector<png_byte> row(per_row * (img.bit_depth / 8));
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t i = 0; i < per_row; ++i) {
        const std::uint16_t v = img.samples[y * per_row + i];
        if (img.bit_depth == 16) {
          row[2 * i] = static_cast<png_byte>(v >> 8);  // PNG stores big-endian
          row[2 * i + 1] = static_cast<png_byte>(v & 0xff);
        } else {
          row[i] = static_cast<png_byte>(v);
        }
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

Tensor load_image(const std::filesystem::path& path) {
  RawImage img = read_png(path);
  if (img.channels != 3 || img.bit_depth != 8) {
    throw DataError("'" + path.string() + "': expected an 8-bit RGB image, got " + std::to_string(img.channels) +
                    " channel(s) at " + std::to_string(img.bit_depth) + " bits");
  }
  const std::size_t hw = img.width * img.height;
  std::vector<double> v(3 * hw);
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < 3; ++c) v[c * hw + p] = img.samples[p * 3 + c] / 255.0;
  }
  return Tensor({1, 3, img.height, img.width}, std::move(v));
}

Tensor load_depth(const std::filesystem::path& path) {
  RawImage img = read_png(path);
  if (img.channels != 1) {
    throw DataError("'" + path.string() + "': expected a single-channel depth map, got " + std::to_string(img.channels) +
                    " channels");
  }
  const double max_value = img.bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<double> v(img.samples.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.samples[i] / max_value;
  return Tensor({1, 1, img.height, img.width}, std::move(v));
}

RgbdImage load_pair(const std::filesystem::path& rgb_path, const std::filesystem::path& depth_path) {
  RgbdImage pair{load_image(rgb_path), load_depth(depth_path)};
  if (pair.rgb.shape()[2] != pair.depth.shape()[2] || pair.rgb.shape()[3] != pair.depth.shape()[3]) {
    throw DataError("depth map '" + depth_path.string() + "' is " + shape_str(pair.depth.shape()) +
                    ", not aligned with '" + rgb_path.string() + "' " + shape_str(pair.rgb.shape()));
  }
  return pair;
}

void save_rgb(const std::filesystem::path& path, const Tensor& rgb) {
  const Shape& s = rgb.shape();
  const bool batched = s.size() == 4;
  if (!(batched && s[0] == 1 && s[1] == 3) && !(s.size() == 3 && s[0] == 3)) {
    throw DimensionError("save_rgb: expected [1,3,H,W] or [3,H,W], got " + shape_str(s));
  }
  RawImage img;
  img.height = s[s.size() - 2];
  img.width = s[s.size() - 1];
  img.channels = 3;
  img.bit_depth = 8;
  const std::size_t hw = img.width * img.height;
  img.samples.resize(3 * hw);
  auto v = rgb.values();
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t c = 0; c < 3; ++c) img.samples[p * 3 + c] = quantize(v[c * hw + p], 255.0);
  }
  write_png(path, img);
}

void save_gray(const std::filesystem::path& path, const Tensor& plane, std::size_t bit_depth) {
  const Shape& s = plane.shape();
  if (s.size() < 2) throw DimensionError("save_gray: need at least 2 axes");
  RawImage img;
  img.height = s[s.size() - 2];
  img.width = s[s.size() - 1];
  if (img.width * img.height != plane.numel()) throw DimensionError("save_gray: tensor holds more than one plane");
  img.channels = 1;
  img.bit_depth = bit_depth;
  const double max_value = bit_depth == 16 ? 65535.0 : 255.0;
  img.samples.resize(plane.numel());
  auto v = plane.values();
  for (std::size_t i = 0; i < v.size(); ++i) img.samples[i] = quantize(v[i], max_value);
  write_png(path, img);
}

}  // namespace dgiqa
