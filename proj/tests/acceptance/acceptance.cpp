// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria (0 when all pass). Pass criterion numbers as arguments to
// run a subset; criteria 3, 6, 7, 8 and 10 share one trained toy model.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "dgiqa/checkpoint.hpp"
#include "dgiqa/config.hpp"
#include "dgiqa/gradcheck.hpp"
#include "dgiqa/manifest.hpp"
#include "dgiqa/metrics.hpp"
#include "dgiqa/model.hpp"
#include "dgiqa/synth.hpp"
#include "dgiqa/training.hpp"

namespace fs = std::filesystem;
using namespace dgiqa;

namespace {

// --- pinned tolerances and budgets ------------------------------------------

constexpr double kGradTolerance = 1e-4;
constexpr std::size_t kGradInstances = 20;
constexpr double kGradBudgetSeconds = 120.0;

constexpr double kMinSrocc = 0.90;
constexpr double kMinPlcc = 0.90;
constexpr std::size_t kTrainEpochs = 60;
constexpr double kTrainBudgetSeconds = 15.0 * 60.0;
// Pilot (same data, seed and config; training is bit-reproducible): best val
// SROCC 0.9773 / PLCC 0.9859 at epoch 38 of 60, 424 s of training. An earlier
// pilot on a build with address-dependent gradient sums reached 0.9782 / 0.9866.
constexpr double kPilotSrocc = 0.9773;
constexpr double kPilotPlcc = 0.9859;

constexpr double kMetricTolerance = 1e-10;
constexpr std::size_t kMetricTrials = 1000;
// Affine maps reassociate the sums, so PLCC invariance is checked at
// round-off level.
constexpr double kAffineTolerance = 1e-12;

constexpr double kOverlapTolerance = 1e-4;

constexpr std::size_t kCropRepeats = 50;
constexpr double kCropBudgetSeconds = 120.0;

constexpr double kRowSumTolerance = 1e-9;
constexpr double kEquivarianceTolerance = 1e-12;
constexpr std::size_t kPermutations = 100;

constexpr std::size_t kCheckpointEntries = 20;

// --- reporting --------------------------------------------------------------

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

// --- shared toy run -----------------------------------------------------------

struct ToyRun {
  fs::path data_dir;
  std::vector<Sample> samples;
  std::vector<ManifestRecord> records;
  std::vector<std::size_t> train_idx, val_idx;
  std::vector<Sample> train_set, val_set;
  TrainConfig config;
  ModelConfig model_config;
  std::uint64_t seed = 0;
  std::optional<Model> model;
  TrainResult result;
  double train_seconds = 0.0;
  bool deterministic = false;
  std::string determinism_detail;
};

struct StopEarly {};

class Fixture {
 public:
  explicit Fixture(fs::path root) : root_(std::move(root)) {}

  ToyRun& data() {
    if (!data_) {
      ToyRun r;
      r.data_dir = root_ / "synth";
      SynthSpec spec;  // 200 scenes x 5 blur levels, rendered at 80x80
      spec.seed = 0;
      const fs::path manifest = synth_dataset(spec, r.data_dir);
      r.records = load_manifest(manifest);
      r.samples = load_samples(r.records);
      RunConfig cfg;
      r.config = cfg.train;
      r.config.epochs = kTrainEpochs;
      r.config.seed = r.seed;
      r.model_config = cfg.model;
      std::vector<std::string> groups;
      for (const Sample& s : r.samples) groups.push_back(s.group);
      SplitPlan plan = make_split(r.samples.size(), r.config.split_ratio, r.seed, groups);
      r.train_idx = plan.train;
      r.val_idx = plan.test;
      for (std::size_t i : plan.train) r.train_set.push_back(r.samples[i]);
      for (std::size_t i : plan.test) r.val_set.push_back(r.samples[i]);
      data_ = std::move(r);
    }
    return *data_;
  }

  ToyRun& trained() {
    ToyRun& r = data();
    if (!r.model) {
      std::cerr << "training toy model: " << r.train_set.size() << " train / " << r.val_set.size()
                << " validation samples\n";
      Model m = Model::create(r.model_config, r.seed);
      const auto t0 = std::chrono::steady_clock::now();
      r.result = train(m, r.config, r.train_set, r.val_set, [](const EpochLog& e) { std::cerr << to_json_line(e) << '\n'; });
      r.train_seconds = seconds_since(t0);
      r.model = std::move(m);

      // Replay the first two epochs from scratch; logs must match bit for bit.
      Model again = Model::create(r.model_config, r.seed);
      std::vector<EpochLog> replay;
      try {
        train(again, r.config, r.train_set, r.val_set, [&](const EpochLog& e) {
          replay.push_back(e);
          if (replay.size() == 2) throw StopEarly{};
        });
      } catch (const StopEarly&) {
      }
      r.deterministic = replay.size() == 2;
      for (std::size_t i = 0; i < replay.size() && r.deterministic; ++i) {
        const EpochLog &a = replay[i], &b = r.result.log[i];
        r.deterministic = a.train_loss == b.train_loss && a.val_srocc == b.val_srocc && a.val_plcc == b.val_plcc;
      }
      r.determinism_detail = r.deterministic ? "epochs 0-1 replay bit-identical" : "replay diverged";
    }
    return r;
  }

 private:
  fs::path root_;
  std::optional<ToyRun> data_;
};

// --- 1: gradient suite --------------------------------------------------------

Outcome gradient_suite() {
  GradCheckOptions opts;
  opts.tolerance = kGradTolerance;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> failed;
  SuiteReport rep = run_gradcheck_suite(0, kGradInstances, opts, [&](const GradCheckResult& r) {
    if (!r.passed) failed.push_back(r.name);
  });
  const double secs = seconds_since(t0);
  bool has_model = false;
  for (const auto& r : rep.results) has_model |= r.name == "model_toy";
  Outcome o;
  o.pass = rep.passed() && has_model && rep.instances >= kGradInstances && secs <= kGradBudgetSeconds;
  o.detail = std::to_string(rep.results.size()) + " checks x " + std::to_string(rep.instances) +
             " instances, max rel err " + fmt(rep.max_rel_error(), 3) + " (tol " + fmt(kGradTolerance) + "), " +
             fmt(secs, 3) + " s";
  for (const auto& f : failed) o.detail += ", FAILED " + f;
  return o;
}

// --- 2: shape contract ----------------------------------------------------------

Outcome shape_contract() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> errors;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) errors.push_back(what);
  };

  // Full-scale tables.
  ModelConfig full = ModelConfig::full_scale();
  const std::size_t c[] = {96, 192, 384, 768}, cp[] = {64, 128, 256, 512}, cpp[] = {4, 8, 16, 32};
  for (std::size_t s = 0; s < kStages; ++s) {
    const TcbShape t = full.tcb_shape(s);
    expect(t.in_channels == c[s] && t.out_channels == cp[s] && t.squeezed() == cpp[s],
           "full-scale TCB table stage " + std::to_string(s + 1));
  }
  expect(full.model_dim() == 960, "full-scale D_model");

  const std::size_t bases[] = {8, 16, 96}, sizes[] = {64, 128, 224};
  std::size_t configs = 0;
  for (std::size_t base : bases) {
    for (std::size_t size : sizes) {
      ModelConfig mc = base == 96 ? ModelConfig::full_scale() : ModelConfig::toy();
      mc.backbone.base_channels = base;
      mc.backbone.input_h = mc.backbone.input_w = size;
      mc.tcb_base_channels = base == 96 ? 64 : base;
      const std::string tag = "base " + std::to_string(base) + " @" + std::to_string(size);
      Rng rng(configs);
      NoGradGuard guard;
      BackboneParams bb = init_backbone(mc.backbone, 3, rng);
      FeaturePyramid f = extract(Tensor::zeros({1, 3, size, size}), bb, Mode::kEval);
      std::size_t tokens = 0;
      for (std::size_t s = 0; s < kStages; ++s) {
        const std::size_t g = size / kStageStrides[s];
        expect(f.stages[s].shape() == Shape{1, base << s, g, g}, tag + " stage " + std::to_string(s + 1));
        TcbParams tp = init_tcb(mc.tcb_shape(s), rng);
        f.stages[s] = tcb_forward(f.stages[s], tp, Mode::kEval);
        expect(f.stages[s].shape() == Shape{1, mc.tcb_base_channels << s, g, g}, tag + " tcb " + std::to_string(s + 1));
        tokens += mc.tcb_base_channels << s;
      }
      TokenMap tm = align_concat(f);
      const std::size_t g4 = size / 32;
      expect(tm.dim() == mc.model_dim() && tm.dim() == tokens && tm.count() == g4 * g4, tag + " tokens");
      DepthCarParams dc = init_depth_car(mc.depth_car_config(), rng);
      Tensor fused = depth_car_forward(tm, tm, dc, mc.depth_car_config());
      expect(fused.shape() == Shape{1, mc.model_dim(), g4, g4}, tag + " fused map");
      HeadParams hp = init_head(mc.head_config(), rng);
      Tensor d = dilated_stack(fused, hp, Mode::kEval);
      expect(d.shape() == Shape{1, mc.head_dim(), g4, g4}, tag + " dilated stack size");
      expect(predict(d, hp).shape() == Shape{1}, tag + " score");
      ++configs;
    }
  }
  // The 224 full-scale grid gives 49 tokens of width 960.
  {
    NoGradGuard guard;
    Rng rng(1);
    BackboneParams bb = init_backbone(full.backbone, 3, rng);
    FeaturePyramid f = extract(Tensor::zeros({1, 3, 224, 224}), bb, Mode::kEval);
    for (std::size_t s = 0; s < kStages; ++s) {
      TcbParams tp = init_tcb(full.tcb_shape(s), rng);
      f.stages[s] = tcb_forward(f.stages[s], tp, Mode::kEval);
    }
    TokenMap tm = align_concat(f);
    expect(tm.count() == 49 && tm.dim() == 960, "full-scale token grid");
  }
  Outcome o;
  o.pass = errors.empty();
  o.detail = std::to_string(configs) + " sweep configs + full-scale tables, " + fmt(seconds_since(t0), 3) + " s";
  for (const auto& e : errors) o.detail += ", MISMATCH " + e;
  return o;
}

// --- 3: toy end-to-end ----------------------------------------------------------

Outcome toy_training(Fixture& fx) {
  ToyRun& r = fx.trained();
  std::vector<double> truth;
  for (const Sample& s : r.val_set) truth.push_back(s.score);
  const std::vector<double> pred = predict_center(*r.model, r.val_set, r.config.crop_h, r.config.crop_w);
  const double s = srocc(pred, truth), p = plcc(pred, truth);
  std::set<std::string> train_groups;
  for (const Sample& x : r.train_set) train_groups.insert(x.group);
  bool disjoint = true;
  for (const Sample& x : r.val_set) disjoint &= !train_groups.contains(x.group);
  Outcome o;
  o.pass = s >= kMinSrocc && p >= kMinPlcc && r.deterministic && disjoint && r.result.log.size() <= kTrainEpochs &&
           r.train_seconds <= kTrainBudgetSeconds;
  o.detail = "val SROCC " + fmt(s) + " PLCC " + fmt(p) + " (>= " + fmt(kMinSrocc) + "; pilot " + fmt(kPilotSrocc) +
             "/" + fmt(kPilotPlcc) + "), best epoch " + std::to_string(r.result.best_epoch) + "/" +
             std::to_string(r.result.log.size()) + ", " + r.determinism_detail +
             (disjoint ? ", group-disjoint" : ", GROUPS LEAK") + ", " + fmt(r.train_seconds, 4) + " s";
  return o;
}

// --- 4: ablation direction ------------------------------------------------------

Outcome ablation_direction() {
  const ModelConfig toy = ModelConfig::toy();
  const std::size_t full = count_params(toy).total();
  const std::size_t no_tcb = count_params(with_ablation(toy, Ablation::kTcb)).total();
  // The counts must also agree with the instantiated model.
  Model m = Model::create(toy, 0), n = Model::create(with_ablation(toy, Ablation::kTcb), 0);
  Outcome o;
  o.pass = no_tcb > full && m.parameter_count() == full && n.parameter_count() == no_tcb;
  o.detail = "full " + std::to_string(full) + ", w/o TCB " + std::to_string(no_tcb) + ", reduction " +
             fmt(100.0 * (1.0 - static_cast<double>(full) / static_cast<double>(no_tcb)), 3) + "%";
  return o;
}

// --- 5: metric oracles ------------------------------------------------------------

std::vector<double> brute_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double x : v) {
      less += x < v[i];
      equal += x == v[i];
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

double brute_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const long double n = static_cast<long double>(a.size());
  long double sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) sa += a[i], sb += b[i];
  const long double ma = sa / n, mb = sb / n;
  long double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return static_cast<double>(cov / std::sqrt(va * vb));
}

Outcome metric_oracles() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> len(3, 50);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> level(0, 4);
  double worst_s = 0.0, worst_p = 0.0, worst_affine = 0.0;
  std::size_t monotone_breaks = 0, skipped = 0, tied = 0;
  for (std::size_t trial = 0; trial < kMetricTrials; ++trial) {
    const std::size_t n = len(rng);
    const bool ties = trial % 2 == 1;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = ties ? level(rng) : normal(rng);
      y[i] = ties && i % 3 == 0 ? level(rng) : normal(rng) + 0.5 * x[i];
    }
    const auto rx = brute_ranks(x), ry = brute_ranks(y);
    auto constant = [](const std::vector<double>& v) { return std::all_of(v.begin(), v.end(), [&](double a) { return a == v[0]; }); };
    if (constant(x) || constant(y)) {
      ++skipped;  // zero variance is a documented error, not a value
      continue;
    }
    tied += ties;
    worst_p = std::max(worst_p, std::abs(plcc(x, y) - brute_pearson(x, y)));
    worst_s = std::max(worst_s, std::abs(srocc(x, y) - brute_pearson(rx, ry)));

    std::vector<double> fx(n), ax(n);
    for (std::size_t i = 0; i < n; ++i) {
      fx[i] = std::atan(3.0 * x[i]) + x[i] * x[i] * x[i];  // strictly increasing
      ax[i] = 2.5 * x[i] - 7.0;
    }
    monotone_breaks += srocc(fx, y) != srocc(x, y);
    worst_affine = std::max(worst_affine, std::abs(plcc(ax, y) - plcc(x, y)));
  }
  Outcome o;
  o.pass = worst_s <= kMetricTolerance && worst_p <= kMetricTolerance && monotone_breaks == 0 &&
           worst_affine <= kAffineTolerance && kMetricTrials - skipped >= 990;
  o.detail = std::to_string(kMetricTrials - skipped) + " vectors (" + std::to_string(tied) + " with ties), max |dSROCC| " +
             fmt(worst_s, 3) + ", max |dPLCC| " + fmt(worst_p, 3) + ", monotone breaks " + std::to_string(monotone_breaks) +
             ", affine drift " + fmt(worst_affine, 3);
  return o;
}

// --- 6: density separation -----------------------------------------------------------

std::vector<double> level_scores(Model& model, const ToyRun& r, std::size_t level, std::size_t crops) {
  std::vector<double> out;
  const std::string tag = "_l" + std::to_string(level) + ".png";
  for (std::size_t i : r.val_idx) {
    const ManifestRecord& rec = r.records[i];
    const std::string name = rec.rgb_path.filename().string();
    if (name.size() < tag.size() || name.compare(name.size() - tag.size(), tag.size(), tag) != 0) continue;
    out.push_back(multi_crop_score(model, r.samples[i].image, crops, r.config.crop_h, r.config.crop_w, i));
  }
  return out;
}

Outcome density_separation_check(Fixture& fx) {
  double worst = 0.0;
  const double sigma = 0.7;
  for (double ratio : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    const double analytic = std::erfc(ratio / (2.0 * std::sqrt(2.0)));
    worst = std::max(worst, std::abs(gaussian_overlap(0.3, sigma, 0.3 + ratio * sigma, sigma) - analytic));
  }
  ToyRun& r = fx.trained();
  const std::size_t levels = 5, crops = 5;
  const auto hi = level_scores(*r.model, r, 0, crops), lo = level_scores(*r.model, r, levels - 1, crops);
  Model untrained = Model::create(r.model_config, r.seed);
  const auto uhi = level_scores(untrained, r, 0, crops), ulo = level_scores(untrained, r, levels - 1, crops);
  const DensityReport trained = density_separation(hi, lo), fresh = density_separation(uhi, ulo);
  Outcome o;
  o.pass = worst <= kOverlapTolerance && trained.separation_pct() > fresh.separation_pct();
  o.detail = "max |overlap - 2Phi(-d/2)| " + fmt(worst, 3) + "; " + std::to_string(hi.size()) +
             " held-out scenes, separation trained " + fmt(trained.separation_pct()) + "% vs untrained " +
             fmt(fresh.separation_pct()) + "%";
  return o;
}

// --- 7: multi-crop stabilization ----------------------------------------------------

double stddev(const std::vector<double>& v) {
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

Outcome multi_crop(Fixture& fx) {
  ToyRun& r = fx.trained();
  const auto t0 = std::chrono::steady_clock::now();
  // Held-out images at the middle blur level.
  std::vector<std::size_t> picks;
  for (std::size_t i : r.val_idx) {
    if (r.records[i].rgb_path.filename().string().ends_with("_l2.png")) picks.push_back(i);
    if (picks.size() == 3) break;
  }
  bool ok = !picks.empty();
  std::string detail;
  for (std::size_t i : picks) {
    std::vector<double> one, many;
    for (std::size_t rep = 0; rep < kCropRepeats; ++rep) {
      one.push_back(multi_crop_score(*r.model, r.samples[i].image, 1, r.config.crop_h, r.config.crop_w, 1000 + rep));
      many.push_back(multi_crop_score(*r.model, r.samples[i].image, 25, r.config.crop_h, r.config.crop_w, 1000 + rep));
    }
    const double s1 = stddev(one), s25 = stddev(many);
    ok &= s25 < s1;
    detail += (detail.empty() ? "" : "; ") + std::string("std@1 ") + fmt(s1, 3) + " vs std@25 " + fmt(s25, 3);
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ok && secs <= kCropBudgetSeconds;
  o.detail = std::to_string(picks.size()) + " images x " + std::to_string(kCropRepeats) + " repeats: " + detail + ", " +
             fmt(secs, 3) + " s";
  return o;
}

// --- 8: consistency loss ---------------------------------------------------------------

std::vector<double> flat(Model& m) {
  std::vector<double> v;
  for (auto& [name, t] : m.tensors()) v.insert(v.end(), t.values().begin(), t.values().end());
  return v;
}

Outcome consistency(Fixture& fx) {
  ToyRun& r = fx.trained();
  const double cl0 = r.result.log.front().train_cl, cl_end = r.result.log.back().train_cl;

  // Short runs on a subset: each lambda twice.
  std::vector<Sample> subset(r.train_set.begin(), r.train_set.begin() + 48);
  auto run = [&](double lambda) {
    TrainConfig c = r.config;
    c.epochs = 2;
    c.lambda_cl = lambda;
    c.keep_best = false;
    Model m = Model::create(r.model_config, 3);
    TrainResult tr = train(m, c, subset, {});
    return std::make_pair(flat(m), tr.log.back().train_loss);
  };
  const auto a0 = run(0.0), b0 = run(0.0), a3 = run(0.3), b3 = run(0.3);
  const bool same0 = a0 == b0, same3 = a3 == b3, distinct = a0.first != a3.first;
  Outcome o;
  o.pass = cl_end < cl0 && r.config.lambda_cl == 0.3 && same0 && same3 && distinct;
  o.detail = "lambda 0.3 consistency loss epoch 0 " + fmt(cl0, 3) + " -> final " + fmt(cl_end, 3) +
             "; repeat runs identical (lambda 0: " + (same0 ? "yes" : "no") + ", lambda 0.3: " + (same3 ? "yes" : "no") +
             "), lambda 0 vs 0.3 " + (distinct ? "distinct" : "IDENTICAL");
  return o;
}

}  // namespace

namespace {

// --- 9: attention invariants --------------------------------------------------------

Tensor permute_tokens(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
  std::vector<double> v(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t k = 0; k < d; ++k) v[(b * t + i) * d + k] = x[(b * t + perm[i]) * d + k];
  return Tensor(x.shape(), std::move(v));
}

double max_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double worst_row_sum(const Tensor& w) {
  const std::size_t t = w.shape().back();
  double worst = 0.0;
  for (std::size_t r = 0; r < w.numel() / t; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < t; ++c) s += w[r * t + c];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

Outcome attention_invariants() {
  Rng rng(9);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto tokens = [&](std::size_t n, std::size_t h, std::size_t w, std::size_t d) {
    std::vector<double> v(n * h * w * d);
    for (double& x : v) x = normal(rng);
    return TokenMap{Tensor({n, h * w, d}, std::move(v)), h, w};
  };
  const ModelConfig toy = ModelConfig::toy();
  const std::size_t d = toy.model_dim(), heads = toy.heads;
  double row_err = 0.0, equi_err = 0.0;
  std::size_t perms = 0;
  for (bool ln : {false, true}) {
    const AttentionOptions opts{heads, true, ln};
    DepthCarConfig dc{d, opts, ln, false};
    DepthCarParams p = init_depth_car(dc, rng);
    TokenMap q = tokens(2, 4, 4, d), kv = tokens(2, 4, 4, d);
    Tensor wc, ws;
    const Tensor cross = cross_attention(q, kv, p.cross, opts, &wc).tokens;
    const Tensor self = self_attention_refine(TokenMap{cross, 4, 4}, p.self, opts, p.mlp ? &*p.mlp : nullptr, &ws).tokens;
    row_err = std::max({row_err, worst_row_sum(wc), worst_row_sum(ws)});
    for (std::size_t trial = 0; trial < kPermutations / 2; ++trial) {
      std::vector<std::size_t> perm(16);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      TokenMap pq{permute_tokens(q.tokens, perm), 4, 4}, pkv{permute_tokens(kv.tokens, perm), 4, 4};
      Tensor pw;
      const Tensor pc = cross_attention(pq, pkv, p.cross, opts, &pw).tokens;
      const Tensor ps = self_attention_refine(TokenMap{pc, 4, 4}, p.self, opts, p.mlp ? &*p.mlp : nullptr).tokens;
      equi_err = std::max({equi_err, max_diff(pc, permute_tokens(cross, perm)), max_diff(ps, permute_tokens(self, perm))});
      row_err = std::max(row_err, worst_row_sum(pw));
      ++perms;
    }
  }
  Outcome o;
  o.pass = row_err <= kRowSumTolerance && equi_err <= kEquivarianceTolerance && perms >= kPermutations;
  o.detail = "max |row sum - 1| " + fmt(row_err, 3) + ", " + std::to_string(perms) +
             " permutations (cross + self, with and without layer norm), max deviation " + fmt(equi_err, 3);
  return o;
}

// --- 10: checkpoint determinism ----------------------------------------------------

Outcome checkpoint_determinism(Fixture& fx, const fs::path& root) {
  ToyRun& r = fx.trained();
  const fs::path path = root / "toy.ckpt";
  save_checkpoint(path, *r.model, r.seed, &r.result.optimizer);
  LoadedCheckpoint back = load_checkpoint(path);
  std::size_t mismatches = 0;
  const std::size_t n = std::min(kCheckpointEntries, r.samples.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = r.val_idx[i % r.val_idx.size()];
    const double a = multi_crop_score(*r.model, r.samples[idx].image, 25, r.config.crop_h, r.config.crop_w, idx);
    const double b = multi_crop_score(back.model, r.samples[idx].image, 25, r.config.crop_h, r.config.crop_w, idx);
    mismatches += a != b;
  }
  Outcome o;
  o.pass = mismatches == 0 && n == kCheckpointEntries && back.optimizer.has_value();
  o.detail = std::to_string(n) + " manifest entries at 25 crops, " + std::to_string(mismatches) + " bitwise mismatches";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int n) { return only.empty() || only.contains(n); };

  const fs::path root = fs::temp_directory_path() / ("dgiqa_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(root);
  Fixture fx(root);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"architecture shape contract", shape_contract},
      {"toy end-to-end training", [&] { return toy_training(fx); }},
      {"ablation direction", ablation_direction},
      {"metric oracles", metric_oracles},
      {"density separation", [&] { return density_separation_check(fx); }},
      {"multi-crop stabilization", [&] { return multi_crop(fx); }},
      {"consistency loss", [&] { return consistency(fx); }},
      {"attention invariants", attention_invariants},
      {"checkpoint determinism", [&] { return checkpoint_determinism(fx, root); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!wanted(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << criteria[i].first << ": " << o.detail << std::endl;
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  return failed;
}
