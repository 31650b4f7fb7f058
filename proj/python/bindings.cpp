// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "dgiqa/checkpoint.hpp"
#include "dgiqa/cli.hpp"
#include "dgiqa/errors.hpp"
#include "dgiqa/gradcheck.hpp"
#include "dgiqa/image_io.hpp"
#include "dgiqa/metrics.hpp"
#include "dgiqa/model.hpp"
#include "dgiqa/ops.hpp"
#include "dgiqa/synth.hpp"

namespace py = pybind11;
using namespace dgiqa;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

// Accepts [3,H,W] / [1,H,W] or batched [N,C,H,W].
RgbdImage to_image(const Array& rgb, const Array& depth) {
  auto batch = [](Tensor t) { return t.rank() == 3 ? reshape(t, {1, t.dim(0), t.dim(1), t.dim(2)}) : t; };
  return {batch(to_tensor(rgb)), batch(to_tensor(depth))};
}

py::dict params_dict(const ParamReport& r) {
  py::dict d;
  d["rgb_backbone"] = r.rgb_backbone;
  d["depth_backbone"] = r.depth_backbone;
  d["rgb_tcb"] = r.rgb_tcb;
  d["depth_tcb"] = r.depth_tcb;
  d["depth_car"] = r.depth_car;
  d["head"] = r.head;
  d["total"] = r.total();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Depth-guided no-reference image quality assessment";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DegenerateError>(m, "DegenerateError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("toy", &ModelConfig::toy)
      .def_static("full_scale", &ModelConfig::full_scale)
      .def_property(
          "base_channels", [](const ModelConfig& c) { return c.backbone.base_channels; },
          [](ModelConfig& c, std::size_t v) { c.backbone.base_channels = v; })
      .def_property(
          "input_size", [](const ModelConfig& c) { return py::make_tuple(c.backbone.input_h, c.backbone.input_w); },
          [](ModelConfig& c, std::pair<std::size_t, std::size_t> hw) {
            c.backbone.input_h = hw.first;
            c.backbone.input_w = hw.second;
          })
      .def_readwrite("tcb_base_channels", &ModelConfig::tcb_base_channels)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("residual", &ModelConfig::residual)
      .def_readwrite("layer_norm", &ModelConfig::layer_norm)
      .def_readwrite("refine_mlp", &ModelConfig::refine_mlp)
      .def_readwrite("swap_modalities", &ModelConfig::swap_modalities)
      .def_readwrite("use_tcb", &ModelConfig::use_tcb)
      .def_readwrite("use_depth_car", &ModelConfig::use_depth_car)
      .def_readwrite("use_dilation", &ModelConfig::use_dilation)
      .def_property_readonly("model_dim", &ModelConfig::model_dim)
      .def("ablate", [](const ModelConfig& c, const std::string& what) { return with_ablation(c, parse_ablation(what)); })
      .def("validate", &ModelConfig::validate);

  m.def("count_params", [](const ModelConfig& c) { return params_dict(count_params(c)); });

  py::class_<Model>(m, "Model")
      .def(py::init([](const ModelConfig& c, std::uint64_t seed) { return Model::create(c, seed); }), py::arg("config"),
           py::arg("seed") = 0)
      .def_property_readonly("config", &Model::config)
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def(
          "score",
          [](Model& model, const Array& rgb, const Array& depth) {
            NoGradGuard guard;
            return to_array(model.score(to_image(rgb, depth), Mode::kEval));
          },
          py::arg("rgb"), py::arg("depth"), "Eval-mode scores for a batch at the model input size.")
      .def(
          "multi_crop_score",
          [](Model& model, const Array& rgb, const Array& depth, std::size_t crops, std::uint64_t seed) {
            const auto& b = model.config().backbone;
            return multi_crop_score(model, to_image(rgb, depth), crops, b.input_h, b.input_w, seed);
          },
          py::arg("rgb"), py::arg("depth"), py::arg("crops") = 25, py::arg("seed") = 0)
      .def(
          "grad_cam",
          [](Model& model, const Array& rgb, const Array& depth) {
            GradCam cam = grad_cam(model, to_image(rgb, depth));
            return py::make_tuple(to_array(cam.heatmap), cam.degenerate);
          },
          py::arg("rgb"), py::arg("depth"))
      .def(
          "fr_score",
          [](Model& model, const Array& ref_rgb, const Array& ref_depth, const Array& rgb, const Array& depth) {
            return fr_score(model, to_image(ref_rgb, ref_depth), to_image(rgb, depth));
          },
          py::arg("ref_rgb"), py::arg("ref_depth"), py::arg("rgb"), py::arg("depth"))
      .def(
          "save", [](Model& model, const std::filesystem::path& p, std::uint64_t seed) { save_checkpoint(p, model, seed); },
          py::arg("path"), py::arg("seed") = 0)
      .def_static(
          "load", [](const std::filesystem::path& p) { return std::move(load_checkpoint(p).model); }, py::arg("path"));

  m.def("srocc", [](std::vector<double> a, std::vector<double> b) { return srocc(a, b); });
  m.def("plcc", [](std::vector<double> a, std::vector<double> b) { return plcc(a, b); });
  m.def("gaussian_overlap", [](double ma, double sa, double mb, double sb) { return gaussian_overlap(ma, sa, mb, sb); });
  m.def("density_separation", [](std::vector<double> hi, std::vector<double> lo) {
    const DensityReport r = density_separation(hi, lo);
    py::dict d;
    d["mu_hi"] = r.mu_hi;
    d["sigma_hi"] = r.sigma_hi;
    d["mu_lo"] = r.mu_lo;
    d["sigma_lo"] = r.sigma_lo;
    d["overlap"] = r.overlap;
    d["separation_pct"] = r.separation_pct();
    d["degenerate"] = r.degenerate;
    return d;
  });

  m.def(
      "render_scene",
      [](std::size_t size, std::uint64_t seed) {
        RgbdImage s = render_scene(size, seed);
        return py::make_tuple(to_array(s.rgb), to_array(s.depth));
      },
      py::arg("size"), py::arg("seed"));
  m.def(
      "load_pair",
      [](const std::filesystem::path& rgb, const std::filesystem::path& depth) {
        RgbdImage p = load_pair(rgb, depth);
        return py::make_tuple(to_array(p.rgb), to_array(p.depth));
      },
      py::arg("rgb_path"), py::arg("depth_path"));

  m.def(
      "gradcheck",
      [](std::uint64_t seed, std::size_t instances) {
        SuiteReport r = run_gradcheck_suite(seed, instances);
        return py::make_tuple(r.passed(), r.max_rel_error());
      },
      py::arg("seed") = 0, py::arg("instances") = 1);

  m.def(
      "cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "dgiqa");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a dgiqa subcommand; returns (exit_code, stdout, stderr).");
}
