// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dgiqa/depth_car.hpp"
#include "dgiqa/head.hpp"
#include "dgiqa/model.hpp"
#include "dgiqa/ops.hpp"
#include "dgiqa/tcb.hpp"
#include "dgiqa/training.hpp"

namespace dgiqa {

namespace {

Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> d(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = true) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

struct Probe {
  double loss;
  std::uint64_t kinks;
};

Probe evaluate(const GradFn& fn, const Tensor& projection) {
  NoGradGuard guard;
  detail::KinkProbe probe;
  const Tensor out = fn();
  const auto v = out.values();
  const auto r = projection.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) loss += v[i] * r[i];
  return {loss, probe.signature()};
}

// Collects every learnable tensor of the blocks under test.
template <typename Params>
std::vector<Tensor> learnable(Params& params) {
  std::vector<Tensor> out;
  params.visit("", [&](const std::string&, Tensor& t) {
    if (t.requires_grad()) out.push_back(t);
  });
  return out;
}

std::vector<Tensor> learnable(BatchNorm& bn) { return {bn.gamma, bn.beta}; }

std::vector<Tensor> join(std::vector<Tensor> a, const std::vector<Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

TokenMap random_tokens(std::size_t n, std::size_t h, std::size_t w, std::size_t d, Rng& rng) {
  return {randn({n, h * w, d}, rng), h, w};
}

ModelConfig gradcheck_model_config() {
  ModelConfig c = ModelConfig::toy();
  c.backbone.base_channels = 8;
  c.tcb_base_channels = 4;
  c.heads = 2;
  return c;
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, const GradFn& fn, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options, Rng& rng) {
  GradCheckResult result;
  result.name = name;

  // Fixed random projection of the output.
  Tensor projection;
  {
    NoGradGuard guard;
    const Tensor out = fn();
    projection = uniform(out.shape(), rng, -1.0, 1.0, false);
  }

  std::vector<Tensor> leaves = inputs;
  for (Tensor& t : leaves) t.zero_grad();
  std::uint64_t base_kinks = 0;
  double floor = options.floor;
  {
    detail::KinkProbe probe;
    Tensor projected = mul(fn(), projection);
    Tensor loss = sum(projected);
    base_kinks = probe.signature();
    // Round-off in the difference quotient grows with the summed magnitude.
    double mass = 0.0;
    for (double v : projected.values()) mass += std::abs(v);
    floor *= std::max(1.0, mass);
    loss.backward();
  }

  for (Tensor& t : leaves) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > options.coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coords_per_tensor);
    }
    for (std::size_t i : coords) {
      auto values = t.mutable_values();
      const double original = values[i];
      values[i] = original + options.step;
      const Probe plus = evaluate(fn, projection);
      values[i] = original - options.step;
      const Probe minus = evaluate(fn, projection);
      values[i] = original;
      if (plus.kinks != base_kinks || minus.kinks != base_kinks) {
        ++result.skipped;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * options.step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double err = std::abs(a - numeric) / denom;
      if (!(err <= result.max_rel_error)) result.max_rel_error = std::max(result.max_rel_error, std::isnan(err) ? INFINITY : err);
      ++result.checked;
    }
    t.zero_grad();
  }
  result.passed = result.max_rel_error <= options.tolerance && result.checked > 0;
  return result;
}

std::vector<NamedFactory> gradcheck_suite() {
  std::vector<NamedFactory> s;
  auto add_case = [&](std::string name, GradCheckFactory make) { s.push_back({std::move(name), std::move(make)}); };

  add_case("add", [](Rng& rng) {
    Tensor a = randn({3, 4}, rng), b = randn({3, 4}, rng);
    return GradCheckCase{[=] { return add(a, b); }, {a, b}};
  });
  add_case("sub", [](Rng& rng) {
    Tensor a = randn({3, 4}, rng), b = randn({3, 4}, rng);
    return GradCheckCase{[=] { return sub(a, b); }, {a, b}};
  });
  add_case("mul", [](Rng& rng) {
    Tensor a = randn({2, 3, 2}, rng), b = randn({2, 3, 2}, rng);
    return GradCheckCase{[=] { return mul(a, b); }, {a, b}};
  });
  add_case("scale", [](Rng& rng) {
    Tensor a = randn({5}, rng);
    return GradCheckCase{[=] { return scale(a, -2.5); }, {a}};
  });
  add_case("square", [](Rng& rng) {
    Tensor a = randn({2, 5}, rng);
    return GradCheckCase{[=] { return square(a); }, {a}};
  });
  add_case("sum", [](Rng& rng) {
    Tensor a = randn({4, 3}, rng);
    return GradCheckCase{[=] { return sum(a); }, {a}};
  });
  add_case("mean", [](Rng& rng) {
    Tensor a = randn({4, 3}, rng);
    return GradCheckCase{[=] { return mean(a); }, {a}};
  });
  add_case("relu", [](Rng& rng) {
    Tensor a = randn({4, 6}, rng);
    return GradCheckCase{[=] { return relu(a); }, {a}};
  });
  add_case("sigmoid", [](Rng& rng) {
    Tensor a = randn({4, 6}, rng, 3.0);
    return GradCheckCase{[=] { return sigmoid(a); }, {a}};
  });
  add_case("softmax_last", [](Rng& rng) {
    Tensor a = randn({2, 3, 5}, rng, 2.0);
    return GradCheckCase{[=] { return softmax(a, 2); }, {a}};
  });
  add_case("softmax_mid", [](Rng& rng) {
    Tensor a = randn({2, 4, 3}, rng, 2.0);
    return GradCheckCase{[=] { return softmax(a, 1); }, {a}};
  });
  add_case("reshape", [](Rng& rng) {
    Tensor a = randn({2, 6}, rng);
    return GradCheckCase{[=] { return square(reshape(a, {3, 4})); }, {a}};
  });
  add_case("permute", [](Rng& rng) {
    Tensor a = randn({2, 3, 4}, rng);
    return GradCheckCase{[=] { return square(permute(a, {2, 0, 1})); }, {a}};
  });
  add_case("transpose_last", [](Rng& rng) {
    Tensor a = randn({2, 3, 4}, rng);
    return GradCheckCase{[=] { return square(transpose_last(a)); }, {a}};
  });
  add_case("concat", [](Rng& rng) {
    Tensor a = randn({2, 3, 2}, rng), b = randn({2, 1, 2}, rng);
    return GradCheckCase{[=] { return square(concat({a, b}, 1)); }, {a, b}};
  });
  add_case("matmul", [](Rng& rng) {
    Tensor a = randn({3, 4}, rng), b = randn({4, 2}, rng);
    return GradCheckCase{[=] { return matmul(a, b); }, {a, b}};
  });
  add_case("matmul_batched_broadcast", [](Rng& rng) {
    Tensor a = randn({2, 3, 3, 4}, rng), b = randn({4, 5}, rng);
    return GradCheckCase{[=] { return matmul(a, b); }, {a, b}};
  });
  add_case("linear", [](Rng& rng) {
    Tensor x = randn({3, 5}, rng), w = randn({2, 5}, rng), b = randn({2}, rng);
    return GradCheckCase{[=] { return linear(x, w, b); }, {x, w, b}};
  });
  add_case("conv2d", [](Rng& rng) {
    ConvSpec spec{3, 3, 1, 1, 1, 2, 3};
    Tensor x = randn({2, 2, 5, 5}, rng), w = randn({3, 2, 3, 3}, rng), b = randn({3}, rng);
    return GradCheckCase{[=] { return conv2d(x, w, b, spec); }, {x, w, b}};
  });
  add_case("conv2d_stride2", [](Rng& rng) {
    ConvSpec spec{3, 3, 2, 1, 1, 2, 2};
    Tensor x = randn({1, 2, 6, 6}, rng), w = randn({2, 2, 3, 3}, rng), b = randn({2}, rng);
    return GradCheckCase{[=] { return conv2d(x, w, b, spec); }, {x, w, b}};
  });
  add_case("conv2d_dilated", [](Rng& rng) {
    ConvSpec spec{3, 3, 1, 2, 2, 2, 2};
    Tensor x = randn({1, 2, 5, 5}, rng), w = randn({2, 2, 3, 3}, rng), b = randn({2}, rng);
    return GradCheckCase{[=] { return conv2d(x, w, b, spec); }, {x, w, b}};
  });
  add_case("conv2d_patch", [](Rng& rng) {
    ConvSpec spec{4, 4, 4, 0, 1, 3, 2};
    Tensor x = randn({1, 3, 8, 8}, rng), w = randn({2, 3, 4, 4}, rng), b = randn({2}, rng);
    return GradCheckCase{[=] { return conv2d(x, w, b, spec); }, {x, w, b}};
  });
  add_case("conv1x1", [](Rng& rng) {
    Tensor x = randn({2, 3, 3, 3}, rng), w = randn({4, 3, 1, 1}, rng), b = randn({4}, rng);
    return GradCheckCase{[=] { return conv1x1(x, w, b); }, {x, w, b}};
  });
  add_case("batchnorm2d_train", [](Rng& rng) {
    auto bn = std::make_shared<BatchNorm>(BatchNorm::create(3));
    bn->gamma.mutable_values()[1] = 1.7;
    bn->beta.mutable_values()[2] = -0.4;
    Tensor x = randn({2, 3, 2, 3}, rng);
    return GradCheckCase{[=] { return batchnorm2d(x, *bn, Mode::kTrain); }, join({x}, learnable(*bn))};
  });
  add_case("batchnorm2d_eval", [](Rng& rng) {
    auto bn = std::make_shared<BatchNorm>(BatchNorm::create(2));
    bn->running_mean.mutable_values()[0] = 0.3;
    bn->running_var.mutable_values()[1] = 2.0;
    Tensor x = randn({2, 2, 2, 2}, rng);
    return GradCheckCase{[=] { return batchnorm2d(x, *bn, Mode::kEval); }, join({x}, learnable(*bn))};
  });
  add_case("layer_norm", [](Rng& rng) {
    Tensor x = randn({2, 3, 5}, rng), g = randn({5}, rng), b = randn({5}, rng);
    return GradCheckCase{[=] { return layer_norm(x, g, b); }, {x, g, b}};
  });
  add_case("global_avg_pool", [](Rng& rng) {
    Tensor x = randn({2, 3, 2, 3}, rng);
    return GradCheckCase{[=] { return global_avg_pool(x); }, {x}};
  });
  add_case("resize_avg", [](Rng& rng) {
    Tensor x = randn({1, 2, 4, 6}, rng);
    return GradCheckCase{[=] { return resize_avg(x, 2, 3); }, {x}};
  });
  add_case("upsample_nearest", [](Rng& rng) {
    Tensor x = randn({1, 2, 2, 3}, rng);
    return GradCheckCase{[=] { return upsample_nearest(x, 4, 6); }, {x}};
  });
  add_case("flip_horizontal", [](Rng& rng) {
    Tensor x = randn({1, 2, 3, 4}, rng);
    return GradCheckCase{[=] { return square(flip_horizontal(x)); }, {x}};
  });
  add_case("flip_vertical", [](Rng& rng) {
    Tensor x = randn({1, 2, 3, 4}, rng);
    return GradCheckCase{[=] { return square(flip_vertical(x)); }, {x}};
  });
  add_case("crop", [](Rng& rng) {
    Tensor x = randn({1, 2, 5, 5}, rng);
    return GradCheckCase{[=] { return square(crop(x, 1, 2, 3, 2)); }, {x}};
  });
  add_case("mse_loss", [](Rng& rng) {
    Tensor p = randn({6}, rng), t = uniform({6}, rng, 0.0, 1.0, false);
    return GradCheckCase{[=] { return mse_loss(p, t); }, {p}};
  });
  add_case("consistency_loss", [](Rng& rng) {
    Tensor p = randn({6}, rng), q = randn({6}, rng);
    return GradCheckCase{[=] { return total_loss(mse_loss(p, q), consistency_loss(p, q), 0.3); }, {p, q}};
  });
  add_case("tcb", [](Rng& rng) {
    auto params = std::make_shared<TcbParams>(init_tcb({6, 4, 2}, rng));
    Tensor x = randn({2, 6, 4, 4}, rng);
    return GradCheckCase{[=] { return tcb_forward(x, *params, Mode::kTrain); }, join({x}, learnable(*params))};
  });
  add_case("cross_attention", [](Rng& rng) {
    auto params = std::make_shared<AttentionParams>(init_attention(8, {2, true, false}, rng));
    TokenMap q = random_tokens(2, 2, 3, 8, rng), kv = random_tokens(2, 2, 3, 8, rng);
    return GradCheckCase{[=] { return cross_attention(q, kv, *params, {2, true, false}).tokens; },
                         join({q.tokens, kv.tokens}, learnable(*params))};
  });
  add_case("self_attention_refine", [](Rng& rng) {
    const AttentionOptions opts{2, true, true};
    auto params = std::make_shared<AttentionParams>(init_attention(8, opts, rng));
    auto mlp = std::make_shared<MlpParams>(MlpParams{randn({32, 8}, rng, 0.3), randn({32}, rng, 0.1),
                                                     randn({8, 32}, rng, 0.3), randn({8}, rng, 0.1)});
    TokenMap x = random_tokens(2, 2, 2, 8, rng);
    return GradCheckCase{[=] { return self_attention_refine(x, *params, opts, mlp.get()).tokens; },
                         join(join({x.tokens}, learnable(*params)), {mlp->w1, mlp->b1, mlp->w2, mlp->b2})};
  });
  add_case("dilated_head", [](Rng& rng) {
    auto params = std::make_shared<HeadParams>(init_head({6, 6, 2, 4}, rng));
    Tensor x = randn({2, 6, 4, 4}, rng);
    return GradCheckCase{[=] { return predict(dilated_stack(x, *params, Mode::kTrain), *params); },
                         join({x}, learnable(*params))};
  });
  add_case("fr_head", [](Rng& rng) {
    auto params = std::make_shared<HeadParams>(init_head({5, 5, 2, 4}, rng));
    Tensor a = randn({2, 5, 2, 2}, rng), b = randn({2, 5, 2, 2}, rng);
    return GradCheckCase{[=] { return fr_predict(a, b, *params); }, {a, b, params->fc_weight, params->fc_bias}};
  });
  add_case("model_toy", [](Rng& rng) {
    auto model = std::make_shared<Model>(Model::create(gradcheck_model_config(), rng()));
    RgbdImage batch{uniform({2, 3, 64, 64}, rng, 0.0, 1.0), uniform({2, 1, 64, 64}, rng, 0.0, 1.0)};
    std::vector<Tensor> inputs{batch.rgb, batch.depth};
    for (auto& [name, t] : model->parameters()) inputs.push_back(t);
    return GradCheckCase{[=] { return model->score(batch, Mode::kTrain); }, inputs};
  });
  return s;
}

bool SuiteReport::passed() const {
  return !results.empty() && std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

double SuiteReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& r : results) m = std::max(m, r.max_rel_error);
  return m;
}

SuiteReport run_gradcheck_suite(std::uint64_t seed, std::size_t instances, const GradCheckOptions& options,
                                const std::function<void(const GradCheckResult&)>& on_result) {
  SuiteReport report;
  report.instances = instances;
  Rng rng(seed);
  for (const NamedFactory& factory : gradcheck_suite()) {
    GradCheckResult total;
    total.name = factory.name;
    GradCheckOptions o = options;
    // The composed model has ~100 tensors; a few coordinates each keeps it fast.
    if (factory.name == "model_toy") o.coords_per_tensor = std::min<std::size_t>(o.coords_per_tensor, 2);
    for (std::size_t i = 0; i < instances; ++i) {
      GradCheckCase c = factory.make(rng);
      const GradCheckResult r = check_gradients(factory.name, c.fn, c.inputs, o, rng);
      total.max_rel_error = std::max(total.max_rel_error, r.max_rel_error);
      total.checked += r.checked;
      total.skipped += r.skipped;
    }
    total.passed = total.checked > 0 && total.max_rel_error <= options.tolerance;
    if (on_result) on_result(total);
    report.results.push_back(total);
  }
  return report;
}

}  // namespace dgiqa
