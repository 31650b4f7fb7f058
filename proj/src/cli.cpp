// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "dgiqa/checkpoint.hpp"
#include "dgiqa/config.hpp"
#include "dgiqa/errors.hpp"
#include "dgiqa/gradcheck.hpp"
#include "dgiqa/image_io.hpp"
#include "dgiqa/manifest.hpp"
#include "dgiqa/metrics.hpp"
#include "dgiqa/synth.hpp"

namespace dgiqa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void report(std::ostream& out, const std::string& name, const json& value) {
  out << json{{"name", name}, {"value", value}}.dump() << '\n';
}

std::vector<double> score_records(Model& model, std::span<const ManifestRecord> records, std::size_t crops,
                                  std::uint64_t seed) {
  const auto& cfg = model.config().backbone;
  std::vector<double> scores;
  scores.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const RgbdImage image = load_pair(records[i].rgb_path, records[i].depth_path);
    scores.push_back(multi_crop_score(model, image, crops, cfg.input_h, cfg.input_w, seed + i));
  }
  return scores;
}

std::vector<double> truths(std::span<const ManifestRecord> records) {
  std::vector<double> t;
  for (const auto& r : records) t.push_back(r.score);
  return t;
}

struct Options {
  // synth-data
  std::string spec_path, out_dir;
  // shared
  std::string config_path, manifest_path, out_path, ckpt_path, rgb_path, depth_path, log_path;
  std::string manifest_hi, manifest_lo, ablate, predictions_path;
  std::uint64_t seed = 0;
  std::optional<std::size_t> epochs;
  std::optional<double> lambda;
  std::size_t crops = 25;
  std::size_t instances = 20;
};

int cmd_synth(const Options& o, std::ostream& out) {
  SynthSpec spec;
  if (!o.spec_path.empty()) spec = load_synth_spec(o.spec_path);
  const fs::path manifest = synth_dataset(spec, o.out_dir);
  report(out, "manifest", manifest.string());
  report(out, "records", spec.n_samples * spec.levels);
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  if (!o.config_path.empty()) cfg = load_run_config(o.config_path);
  cfg.model = with_ablation(cfg.model, parse_ablation(o.ablate));
  cfg.train.seed = o.seed;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.lambda) cfg.train.lambda_cl = *o.lambda;
  cfg.train.validate();

  const auto records = load_manifest(o.manifest_path);
  const std::vector<Sample> samples = load_samples(records);
  std::vector<std::string> groups;
  for (const Sample& s : samples) groups.push_back(s.group);
  const SplitPlan plan = make_split(samples.size(), cfg.train.split_ratio, o.seed, groups);
  std::vector<Sample> train_set, val_set;
  for (std::size_t i : plan.train) train_set.push_back(samples[i]);
  for (std::size_t i : plan.test) val_set.push_back(samples[i]);
  err << "train: " << train_set.size() << " train / " << val_set.size() << " validation samples, "
      << count_params(cfg.model).total() << " parameters\n";

  std::ofstream log;
  if (!o.log_path.empty()) {
    log.open(o.log_path);
    if (!log) throw DataError("cannot write log '" + o.log_path + "'");
  }
  Model model = Model::create(cfg.model, o.seed);
  const TrainResult result = train(model, cfg.train, train_set, val_set, [&](const EpochLog& e) {
    const std::string line = to_json_line(e);
    if (log.is_open()) log << line << '\n' << std::flush;
    err << line << '\n';
  });
  save_checkpoint(o.out_path, model, o.seed, &result.optimizer);
  report(out, "best_epoch", result.best_epoch);
  report(out, "best_val_srocc", result.best_srocc);
  report(out, "checkpoint", o.out_path);
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(o.ckpt_path);
  const auto records = load_manifest(o.manifest_path);
  const std::vector<double> pred = score_records(ck.model, records, o.crops, o.seed);
  const std::vector<double> truth = truths(records);
  if (!o.predictions_path.empty()) {
    std::ofstream p(o.predictions_path);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      p << json{{"rgb_path", records[i].rgb_path.string()}, {"score", truth[i]}, {"predicted", pred[i]}}.dump() << '\n';
    }
  }
  report(out, "n", records.size());
  report(out, "crops", o.crops);
  report(out, "srocc", srocc(pred, truth));
  report(out, "plcc", plcc(pred, truth));
  return kExitOk;
}

int cmd_score(const Options& o, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(o.ckpt_path);
  const RgbdImage image = load_pair(o.rgb_path, o.depth_path);
  const auto& cfg = ck.model.config().backbone;
  report(out, "score", multi_crop_score(ck.model, image, o.crops, cfg.input_h, cfg.input_w, o.seed));
  return kExitOk;
}

int cmd_density(const Options& o, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(o.ckpt_path);
  const auto hi = score_records(ck.model, load_manifest(o.manifest_hi), o.crops, o.seed);
  const auto lo = score_records(ck.model, load_manifest(o.manifest_lo), o.crops, o.seed);
  const DensityReport r = density_separation(hi, lo);
  report(out, "mu_hi", r.mu_hi);
  report(out, "sigma_hi", r.sigma_hi);
  report(out, "mu_lo", r.mu_lo);
  report(out, "sigma_lo", r.sigma_lo);
  report(out, "overlap", r.overlap);
  report(out, "separation_pct", r.separation_pct());
  report(out, "degenerate", r.degenerate);
  return kExitOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const SuiteReport r = run_gradcheck_suite(o.seed, o.instances, {}, [&](const GradCheckResult& res) {
    out << json{{"name", res.name},
                {"max_rel_error", res.max_rel_error},
                {"checked", res.checked},
                {"skipped", res.skipped},
                {"passed", res.passed}}
               .dump()
        << '\n';
  });
  report(out, "max_rel_error", r.max_rel_error());
  report(out, "passed", r.passed());
  return r.passed() ? kExitOk : kExitFailure;
}

int cmd_gradcam(const Options& o, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(o.ckpt_path);
  const GradCam cam = grad_cam(ck.model, load_pair(o.rgb_path, o.depth_path));
  save_gray(o.out_path, cam.heatmap, 8);
  report(out, "heatmap", o.out_path);
  report(out, "degenerate", cam.degenerate);
  return kExitOk;
}

int cmd_fr_eval(const Options& o, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(o.ckpt_path);
  const auto pairs = load_pairs_manifest(o.manifest_path);
  std::vector<double> pred, truth;
  for (const PairRecord& p : pairs) {
    pred.push_back(fr_score(ck.model, load_pair(p.ref_rgb, p.ref_depth), load_pair(p.dist_rgb, p.dist_depth)));
    truth.push_back(p.score);
  }
  report(out, "n", pairs.size());
  report(out, "srocc", srocc(pred, truth));
  report(out, "plcc", plcc(pred, truth));
  return kExitOk;
}

int cmd_params(const Options& o, std::ostream& out) {
  RunConfig cfg;
  if (!o.config_path.empty()) cfg = load_run_config(o.config_path);
  const ModelConfig model = with_ablation(cfg.model, parse_ablation(o.ablate));
  const ParamReport p = count_params(model);
  report(out, "rgb_backbone", p.rgb_backbone);
  report(out, "depth_backbone", p.depth_backbone);
  report(out, "rgb_tcb", p.rgb_tcb);
  report(out, "depth_tcb", p.depth_tcb);
  report(out, "depth_car", p.depth_car);
  report(out, "head", p.head);
  report(out, "total", p.total());
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"RGB-D no-reference image quality assessment", "dgiqa"};
  app.require_subcommand(1);
  Options o;
  const auto ablations = CLI::IsMember({"", "none", "tcb", "depthcar", "dilation"});

  auto* synth = app.add_subcommand("synth-data", "Render a synthetic RGB-D quality dataset");
  synth->add_option("--spec", o.spec_path, "JSON synth spec (defaults when omitted)")->check(CLI::ExistingFile);
  synth->add_option("--out", o.out_dir, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  tr->add_option("--config", o.config_path, "JSON run config")->check(CLI::ExistingFile);
  tr->add_option("--manifest", o.manifest_path, "Training manifest (split 80:20 internally)")->required();
  tr->add_option("--out", o.out_path, "Checkpoint path")->required();
  tr->add_option("--seed", o.seed, "Seed for init, split and augmentation");
  tr->add_option("--epochs", o.epochs, "Override train.epochs");
  tr->add_option("--lambda", o.lambda, "Override train.lambda_cl");
  tr->add_option("--ablate", o.ablate, "Remove a component: tcb, depthcar, dilation")->check(ablations);
  tr->add_option("--log", o.log_path, "Per-epoch JSONL log");

  auto* ev = app.add_subcommand("eval", "SROCC/PLCC of a checkpoint on a manifest");
  ev->add_option("--ckpt", o.ckpt_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", o.manifest_path)->required();
  ev->add_option("--crops", o.crops, "Random crops per image")->capture_default_str()->check(CLI::PositiveNumber);
  ev->add_option("--seed", o.seed, "Crop seed");
  ev->add_option("--predictions", o.predictions_path, "Write per-image predictions as JSONL");

  auto* sc = app.add_subcommand("score", "Predict the quality of one image");
  sc->add_option("--ckpt", o.ckpt_path)->required()->check(CLI::ExistingFile);
  sc->add_option("--rgb", o.rgb_path)->required();
  sc->add_option("--depth", o.depth_path)->required();
  sc->add_option("--crops", o.crops)->capture_default_str()->check(CLI::PositiveNumber);
  sc->add_option("--seed", o.seed, "Crop seed");

  auto* ds = app.add_subcommand("density-sep", "Score-density separation between two image groups");
  ds->add_option("--ckpt", o.ckpt_path)->required()->check(CLI::ExistingFile);
  ds->add_option("--manifest-hi", o.manifest_hi, "High-quality group")->required();
  ds->add_option("--manifest-lo", o.manifest_lo, "Low-quality group")->required();
  ds->add_option("--crops", o.crops)->capture_default_str()->check(CLI::PositiveNumber);
  ds->add_option("--seed", o.seed, "Crop seed");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--seed", o.seed);
  gc->add_option("--instances", o.instances, "Random instances per check")->capture_default_str()->check(
      CLI::PositiveNumber);

  auto* cam = app.add_subcommand("gradcam", "Write a Grad-CAM heatmap");
  cam->add_option("--ckpt", o.ckpt_path)->required()->check(CLI::ExistingFile);
  cam->add_option("--rgb", o.rgb_path)->required();
  cam->add_option("--depth", o.depth_path)->required();
  cam->add_option("--out", o.out_path, "Output PNG")->required();

  auto* fr = app.add_subcommand("fr-eval", "Full-reference SROCC/PLCC on a pairs manifest");
  fr->add_option("--ckpt", o.ckpt_path)->required()->check(CLI::ExistingFile);
  fr->add_option("--manifest", o.manifest_path, "Pairs manifest")->required();

  auto* pa = app.add_subcommand("params", "Parameter counts per module");
  pa->add_option("--config", o.config_path)->check(CLI::ExistingFile);
  pa->add_option("--ablate", o.ablate)->check(ablations);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(o, out);
    if (tr->parsed()) return cmd_train(o, out, err);
    if (ev->parsed()) return cmd_eval(o, out);
    if (sc->parsed()) return cmd_score(o, out);
    if (ds->parsed()) return cmd_density(o, out);
    if (gc->parsed()) return cmd_gradcheck(o, out);
    if (cam->parsed()) return cmd_gradcam(o, out);
    if (fr->parsed()) return cmd_fr_eval(o, out);
    if (pa->parsed()) return cmd_params(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace dgiqa
