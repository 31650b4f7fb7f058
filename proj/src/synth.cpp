// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>

#include "dgiqa/errors.hpp"
#include "dgiqa/image_io.hpp"
#include "dgiqa/manifest.hpp"

namespace dgiqa {

namespace fs = std::filesystem;

Distortion parse_distortion(const std::string& name) {
  if (name == "gaussian_blur" || name == "blur") return Distortion::kGaussianBlur;
  if (name == "additive_noise" || name == "noise") return Distortion::kAdditiveNoise;
  if (name == "mixed") return Distortion::kMixed;
  throw std::invalid_argument("unknown distortion '" + name + "' (gaussian_blur, additive_noise, mixed)");
}

std::string to_string(Distortion distortion) {
  switch (distortion) {
    case Distortion::kGaussianBlur: return "gaussian_blur";
    case Distortion::kAdditiveNoise: return "additive_noise";
    case Distortion::kMixed: return "mixed";
  }
  return "?";
}

void SynthSpec::validate() const {
  if (n_samples == 0) throw std::invalid_argument("synth: n_samples must be positive");
  if (levels < 2) throw std::invalid_argument("synth: need at least 2 levels");
  if (image_size < 8) throw std::invalid_argument("synth: image_size must be at least 8");
  if (!(blur_sigma_max > 0.0) || !(noise_sigma_max > 0.0)) {
    throw std::invalid_argument("synth: distortion magnitudes must be positive");
  }
}

SynthSpec load_synth_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open synth spec '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  SynthSpec s;
  try {
    s.n_samples = j.value("n_samples", s.n_samples);
    s.image_size = j.value("image_size", s.image_size);
    s.distortion = parse_distortion(j.value("distortion", to_string(s.distortion)));
    s.levels = j.value("levels", s.levels);
    s.seed = j.value("seed", s.seed);
    s.blur_sigma_max = j.value("blur_sigma_max", s.blur_sigma_max);
    s.noise_sigma_max = j.value("noise_sigma_max", s.noise_sigma_max);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  s.validate();
  return s;
}

double synth_score(std::size_t level, std::size_t levels) {
  return 0.05 + 0.9 * (1.0 - static_cast<double>(level) / static_cast<double>(levels));
}

RgbdImage render_scene(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = size, hw = n * n;
  std::vector<double> rgb(3 * hw), depth(hw);

  // Background: two-colour ramp along a random direction, depth ramp along
  // the same direction.
  const double angle = 2.0 * std::numbers::pi * u(rng);
  const double dx = std::cos(angle), dy = std::sin(angle);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = 0.15 + 0.7 * u(rng);
    c1[c] = 0.15 + 0.7 * u(rng);
  }
  const double d0 = 0.5 + 0.4 * u(rng), d1 = 0.5 + 0.4 * u(rng);
  const double half = static_cast<double>(n - 1) / 2.0;
  const double reach = half * (std::abs(dx) + std::abs(dy)) + 1e-9;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double t = 0.5 + 0.5 * ((x - half) * dx + (y - half) * dy) / reach;
      for (int c = 0; c < 3; ++c) rgb[c * hw + y * n + x] = c0[c] + (c1[c] - c0[c]) * t;
      depth[y * n + x] = d0 + (d1 - d0) * t;
    }
  }

  // Shapes: rectangles and discs with stripe texture, each at a constant depth.
  std::uniform_int_distribution<int> count(4, 7);
  const int shapes = count(rng);
  for (int s = 0; s < shapes; ++s) {
    const bool disc = u(rng) < 0.5;
    const double cx = u(rng) * n, cy = u(rng) * n;
    const double rx = (0.08 + 0.17 * u(rng)) * n, ry = (0.08 + 0.17 * u(rng)) * n;
    double col[3], col2[3];
    for (int c = 0; c < 3; ++c) {
      col[c] = u(rng);
      col2[c] = std::clamp(col[c] + (u(rng) < 0.5 ? -0.35 : 0.35), 0.0, 1.0);
    }
    const double period = 2.0 + 3.0 * u(rng);
    const double stripe_angle = std::numbers::pi * u(rng);
    const double sx = std::cos(stripe_angle), sy = std::sin(stripe_angle);
    const double shape_depth = 0.05 + 0.4 * u(rng);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double ex = (x + 0.5 - cx) / rx, ey = (y + 0.5 - cy) / ry;
        const bool inside = disc ? ex * ex + ey * ey <= 1.0 : std::abs(ex) <= 1.0 && std::abs(ey) <= 1.0;
        if (!inside) continue;
        const double phase = (x * sx + y * sy) / period;
        const bool band = (static_cast<long>(std::floor(phase)) & 1) != 0;
        for (int c = 0; c < 3; ++c) rgb[c * hw + y * n + x] = band ? col2[c] : col[c];
        depth[y * n + x] = shape_depth;
      }
    }
  }

  // Fine grain over everything so sharpness is visible in every window.
  std::uniform_real_distribution<double> grain(-0.06, 0.06);
  for (std::size_t p = 0; p < hw; ++p) {
    const double g = grain(rng);
    for (int c = 0; c < 3; ++c) rgb[c * hw + p] = std::clamp(rgb[c * hw + p] + g, 0.0, 1.0);
  }
  return {Tensor({1, 3, n, n}, std::move(rgb)), Tensor({1, 1, n, n}, std::move(depth))};
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  const Shape& s = image.shape();
  if (s.size() < 2) throw DimensionError("gaussian_blur: need at least 2 axes");
  if (sigma < 0.0) throw std::invalid_argument("gaussian_blur: sigma must be non-negative");
  if (sigma == 0.0) return image.clone();
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::size_t planes = image.numel() / (h * w);
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;
  auto reflect = [](long i, long n) {
    if (n == 1) return 0L;
    const long period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
  };
  std::vector<double> src(image.values().begin(), image.values().end()), tmp(src.size()), dst(src.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* in = src.data() + p * h * w;
    double* mid = tmp.data() + p * h * w;
    double* out = dst.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i) acc += k[i + radius] * in[y * w + reflect(static_cast<long>(x) + i, w)];
        mid[y * w + x] = acc;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long i = -radius; i <= radius; ++i) acc += k[i + radius] * mid[reflect(static_cast<long>(y) + i, h) * w + x];
        out[y * w + x] = acc;
      }
    }
  }
  return Tensor(s, std::move(dst));
}

Tensor additive_noise(const Tensor& image, double sigma, Rng& rng) {
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<double> v(image.values().begin(), image.values().end());
  if (sigma > 0.0) {
    for (double& x : v) x = std::clamp(x + noise(rng), 0.0, 1.0);
  }
  return Tensor(image.shape(), std::move(v));
}

Tensor distort(const Tensor& rgb, Distortion distortion, std::size_t level, const SynthSpec& spec, Rng& rng,
               bool use_noise) {
  const double t = static_cast<double>(level) / static_cast<double>(spec.levels - 1);
  const bool noise = distortion == Distortion::kAdditiveNoise || (distortion == Distortion::kMixed && use_noise);
  if (level == 0) return rgb.clone();
  return noise ? additive_noise(rgb, spec.noise_sigma_max * t, rng) : gaussian_blur(rgb, spec.blur_sigma_max * t);
}

fs::path synth_dataset(const SynthSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "rgb", ec);
  fs::create_directories(out_dir / "depth", ec);
  if (ec || !fs::is_directory(out_dir / "rgb")) {
    throw DataError("output directory '" + out_dir.string() + "' is not writable");
  }
  std::vector<ManifestRecord> all;
  std::vector<std::vector<ManifestRecord>> per_level(spec.levels);
  std::vector<PairRecord> pairs;
  Rng master(spec.seed);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const std::uint64_t scene_seed = master();
    const std::uint64_t distortion_seed = master();
    const RgbdImage scene = render_scene(spec.image_size, scene_seed);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04zu", i);
    const fs::path depth_path = out_dir / "depth" / (std::string(name) + ".png");
    save_gray(depth_path, scene.depth, 16);
    Rng rng(distortion_seed);
    const bool use_noise = (i % 2) == 1;
    fs::path ref_path;
    for (std::size_t level = 0; level < spec.levels; ++level) {
      const fs::path rgb_path = out_dir / "rgb" / (std::string(name) + "_l" + std::to_string(level) + ".png");
      save_rgb(rgb_path, distort(scene.rgb, spec.distortion, level, spec, rng, use_noise));
      ManifestRecord r{rgb_path, depth_path, synth_score(level, spec.levels), std::string(name)};
      all.push_back(r);
      per_level[level].push_back(r);
      if (level == 0) {
        ref_path = rgb_path;
      } else {
        pairs.push_back({ref_path, depth_path, rgb_path, depth_path, r.score});
      }
    }
  }
  const fs::path manifest = out_dir / "manifest.jsonl";
  write_manifest(manifest, all);
  for (std::size_t level = 0; level < spec.levels; ++level) {
    write_manifest(out_dir / ("level_" + std::to_string(level) + ".jsonl"), per_level[level]);
  }
  write_pairs_manifest(out_dir / "pairs.jsonl", pairs);
  return manifest;
}

}  // namespace dgiqa
