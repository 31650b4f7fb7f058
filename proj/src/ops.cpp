// Copyright 2026 The DGIQA-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "dgiqa/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "dgiqa/errors.hpp"

namespace dgiqa {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local detail::KinkProbe* g_probe = nullptr;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": operand shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
  }
}

// Grad buffer of an op input, or nullptr when it does not take gradients.
double* grad_of(const Tensor& t) { return t.requires_grad() ? t.node().grad_buffer().data() : nullptr; }

template <typename F>
Tensor unary(const Tensor& x, F&& value_fn, std::function<void(const detail::Node&)> bw) {
  std::vector<double> out(x.numel());
  auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value_fn(in[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, std::move(bw));
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

std::size_t ConvSpec::output_size(std::size_t size, std::size_t kernel) const {
  if (stride == 0 || dilation == 0 || kernel == 0) throw DimensionError("conv: stride, dilation and kernel must be positive");
  const long long span = static_cast<long long>(dilation) * static_cast<long long>(kernel - 1) + 1;
  const long long padded = static_cast<long long>(size) + 2 * static_cast<long long>(padding);
  if (padded < span) {
    throw DimensionError("conv: input extent " + std::to_string(size) + " (padding " + std::to_string(padding) +
                         ") is smaller than the dilated kernel span " + std::to_string(span));
  }
  return static_cast<std::size_t>((padded - span) / static_cast<long long>(stride) + 1);
}

BatchNorm BatchNorm::create(std::size_t channels) {
  return BatchNorm{Tensor::full({channels}, 1.0, true), Tensor::zeros({channels}, true), Tensor::zeros({channels}),
                   Tensor::full({channels}, 1.0)};
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](const detail::Node& self) {
    for (const Tensor* t : {&a, &b}) {
      if (double* g = grad_of(*t)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](const detail::Node& self) {
    if (double* g = grad_of(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(b)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](const detail::Node& self) {
    auto av = a.values();
    auto bv = b.values();
    if (double* g = grad_of(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = grad_of(b)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double v) { return v * factor; }, [a, factor](const detail::Node& self) {
    if (double* g = grad_of(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    }
  });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double v) { return v * v; }, [a](const detail::Node& self) {
    auto av = a.values();
    if (double* g = grad_of(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += 2.0 * av[i] * self.grad[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  auto av = a.values();
  const double total = std::accumulate(av.begin(), av.end(), 0.0);
  return Tensor::make_result({1}, {total}, {a}, [a](const detail::Node& self) {
    if (double* g = grad_of(a)) {
      for (std::size_t i = 0; i < a.numel(); ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

// ---------------------------------------------------------------------------
// Activations

Tensor relu(const Tensor& x) {
  if (detail::KinkProbe* probe = detail::KinkProbe::active()) {
    for (double v : x.values()) probe->record(v > 0.0);
  }
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [x](const detail::Node& self) {
    auto xv = x.values();
    if (double* g = grad_of(x)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xv[i] > 0.0) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  auto fn = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(x, fn, [x](const detail::Node& self) {
    if (double* g = grad_of(x)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.value[i];
        g[i] += self.grad[i] * y * (1.0 - y);
      }
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  const AxisSplit s = split_at(x.shape(), axis);
  auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < s.len; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= z;
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x, s](const detail::Node& self) {
    double* g = grad_of(x);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) dot += self.grad[base + j * s.inner] * self.value[base + j * s.inner];
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t k = base + j * s.inner;
          g[k] += self.value[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [x](const detail::Node& self) {
    if (double* g = grad_of(x)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  if (order.size() != r) throw DimensionError("permute: order has " + std::to_string(order.size()) + " axes, tensor has " + std::to_string(r));
  std::vector<bool> used(r, false);
  for (std::size_t a : order) {
    if (a >= r || used[a]) throw DimensionError("permute: order is not a permutation");
    used[a] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[order[i]];

  auto src = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < x.numel(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[order[i]];
    (*src)[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*src)[i]];
  return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [x, src](const detail::Node& self) {
    if (double* g = grad_of(x)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*src)[i]] += self.grad[i];
    }
  });
}

Tensor transpose_last(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last: rank < 2");
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[x.rank() - 1], order[x.rank() - 2]);
  return permute(x, order);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.shape()[d] != first[d]) {
        throw DimensionError("concat: axis " + std::to_string(d) + " differs, " + shape_str(p.shape()) + " vs " +
                             shape_str(first));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  const AxisSplit s = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t len = p.shape()[axis];
    auto pv = p.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.begin() + o * len * s.inner, len * s.inner, out.begin() + (o * s.len + offset) * s.inner);
    }
    offset += len;
  }
  return Tensor::make_result(out_shape, std::move(out), parts, [parts, axis, s](const detail::Node& self) {
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      const std::size_t len = p.shape()[axis];
      if (double* g = grad_of(p)) {
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* src = self.grad.data() + (o * s.len + offset) * s.inner;
          double* dst = g + o * len * s.inner;
          for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
        }
      }
      offset += len;
    }
  });
}

// ---------------------------------------------------------------------------
// Contractions

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw DimensionError("matmul: operands need rank >= 2");
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t kb = b.shape()[b.rank() - 2];
  const std::size_t n = b.shape()[b.rank() - 1];
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t ra = a.rank() - 2;
  const std::size_t rb = b.rank() - 2;
  const std::size_t rout = std::max(ra, rb);
  Shape batch(rout, 1);
  for (std::size_t i = 0; i < rout; ++i) {
    const std::size_t da = i + ra >= rout ? a.shape()[i + ra - rout] : 1;
    const std::size_t db = i + rb >= rout ? b.shape()[i + rb - rout] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("matmul: batch axes not broadcastable, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    batch[i] = std::max(da, db);
  }
  // Per output batch entry, the matrix offsets into a and b.
  const std::size_t nbatch = shape_numel(batch);
  auto a_off = std::make_shared<std::vector<std::size_t>>(nbatch);
  auto b_off = std::make_shared<std::vector<std::size_t>>(nbatch);
  {
    std::vector<std::size_t> sa(rout, 0), sb(rout, 0);
    std::size_t acc_a = m * k, acc_b = k * n;
    for (std::size_t i = rout; i-- > 0;) {
      if (i + ra >= rout) {
        const std::size_t d = a.shape()[i + ra - rout];
        sa[i] = d == 1 ? 0 : acc_a;
        acc_a *= d;
      }
      if (i + rb >= rout) {
        const std::size_t d = b.shape()[i + rb - rout];
        sb[i] = d == 1 ? 0 : acc_b;
        acc_b *= d;
      }
    }
    std::vector<std::size_t> idx(rout, 0);
    for (std::size_t bi = 0; bi < nbatch; ++bi) {
      std::size_t oa = 0, ob = 0;
      for (std::size_t i = 0; i < rout; ++i) {
        oa += idx[i] * sa[i];
        ob += idx[i] * sb[i];
      }
      (*a_off)[bi] = oa;
      (*b_off)[bi] = ob;
      for (std::size_t i = rout; i-- > 0;) {
        if (++idx[i] < batch[i]) break;
        idx[i] = 0;
      }
    }
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(nbatch * m * n);
  for (std::size_t bi = 0; bi < nbatch; ++bi) {
    ConstMatMap am(a.values().data() + (*a_off)[bi], m, k);
    ConstMatMap bm(b.values().data() + (*b_off)[bi], k, n);
    MatMap(out.data() + bi * m * n, m, n).noalias() = am * bm;
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {a, b},
                             [a, b, a_off, b_off, m, k, n, nbatch](const detail::Node& self) {
                               double* ga = grad_of(a);
                               double* gb = grad_of(b);
                               for (std::size_t bi = 0; bi < nbatch; ++bi) {
                                 ConstMatMap go(self.grad.data() + bi * m * n, m, n);
                                 if (ga) {
                                   ConstMatMap bm(b.values().data() + (*b_off)[bi], k, n);
                                   MatMap(ga + (*a_off)[bi], m, k).noalias() += go * bm.transpose();
                                 }
                                 if (gb) {
                                   ConstMatMap am(a.values().data() + (*a_off)[bi], m, k);
                                   MatMap(gb + (*b_off)[bi], k, n).noalias() += am.transpose() * go;
                                 }
                               }
                             });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2);
  require_rank("linear weight", weight, 2);
  const std::size_t batch = x.shape()[0];
  const std::size_t in = x.shape()[1];
  const std::size_t out_features = weight.shape()[0];
  if (weight.shape()[1] != in) {
    throw DimensionError("linear: feature axis (1) has " + std::to_string(in) + ", weight expects " +
                         std::to_string(weight.shape()[1]));
  }
  if (bias.defined() && bias.numel() != out_features) throw DimensionError("linear: bias length mismatch");
  std::vector<double> out(batch * out_features);
  {
    ConstMatMap xm(x.values().data(), batch, in);
    ConstMatMap wm(weight.values().data(), out_features, in);
    MatMap om(out.data(), batch, out_features);
    om.noalias() = xm * wm.transpose();
    if (bias.defined()) {
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t c = 0; c < out_features; ++c) om(r, c) += bias.values()[c];
      }
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result({batch, out_features}, std::move(out), inputs,
                             [x, weight, bias, batch, in, out_features](const detail::Node& self) {
                               ConstMatMap go(self.grad.data(), batch, out_features);
                               if (double* gx = grad_of(x)) {
                                 ConstMatMap wm(weight.values().data(), out_features, in);
                                 MatMap(gx, batch, in).noalias() += go * wm;
                               }
                               if (double* gw = grad_of(weight)) {
                                 ConstMatMap xm(x.values().data(), batch, in);
                                 MatMap(gw, out_features, in).noalias() += go.transpose() * xm;
                               }
                               if (bias.defined()) {
                                 if (double* gb = grad_of(bias)) {
                                   for (std::size_t r = 0; r < batch; ++r) {
                                     for (std::size_t c = 0; c < out_features; ++c) gb[c] += go(r, c);
                                   }
                                 }
                               }
                             });
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, co, kh, kw, ho, wo;
  std::size_t rows() const { return c * kh * kw; }
  std::size_t cols() const { return ho * wo; }
};

void im2col(const double* x, const ConvGeometry& g, const ConvSpec& spec, double* cols) {
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * spec.stride + ki * spec.dilation) - static_cast<long>(spec.padding);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * spec.stride + kj * spec.dilation) - static_cast<long>(spec.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, const ConvSpec& spec, double* dx) {
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * spec.stride + ki * spec.dilation) - static_cast<long>(spec.padding);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * spec.stride + kj * spec.dilation) - static_cast<long>(spec.padding);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& spec) {
  require_rank("conv2d input", x, 4);
  require_rank("conv2d weight", w, 4);
  if (x.shape()[1] != spec.in_channels) {
    throw DimensionError("conv2d: input channel axis (1) has " + std::to_string(x.shape()[1]) +
                         ", spec expects in_channels=" + std::to_string(spec.in_channels));
  }
  const Shape expected_w{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
  if (w.shape() != expected_w) {
    throw DimensionError("conv2d: weight shape " + shape_str(w.shape()) + " does not match spec " + shape_str(expected_w));
  }
  if (b.defined() && b.shape() != Shape{spec.out_channels}) {
    throw DimensionError("conv2d: bias shape " + shape_str(b.shape()) + ", expected [" + std::to_string(spec.out_channels) + "]");
  }
  ConvGeometry g{x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3], spec.out_channels, spec.kernel_h,
                 spec.kernel_w, spec.output_h(x.shape()[2]), spec.output_w(x.shape()[3])};

  const bool pointwise = g.kh == 1 && g.kw == 1 && spec.stride == 1 && spec.padding == 0;
  auto cols = std::make_shared<std::vector<double>>();
  if (!pointwise) {
    cols->resize(g.n * g.rows() * g.cols());
    for (std::size_t i = 0; i < g.n; ++i) {
      im2col(x.values().data() + i * g.c * g.h * g.w, g, spec, cols->data() + i * g.rows() * g.cols());
    }
  }
  auto col_ptr = [x, cols, pointwise, g](std::size_t i) -> const double* {
    return pointwise ? x.values().data() + i * g.c * g.h * g.w : cols->data() + i * g.rows() * g.cols();
  };

  std::vector<double> out(g.n * g.co * g.cols());
  ConstMatMap wm(w.values().data(), g.co, g.rows());
  for (std::size_t i = 0; i < g.n; ++i) {
    MatMap om(out.data() + i * g.co * g.cols(), g.co, g.cols());
    om.noalias() = wm * ConstMatMap(col_ptr(i), g.rows(), g.cols());
    if (b.defined()) {
      for (std::size_t c = 0; c < g.co; ++c) om.row(static_cast<Eigen::Index>(c)).array() += b.values()[c];
    }
  }

  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return Tensor::make_result({g.n, g.co, g.ho, g.wo}, std::move(out), inputs,
                             [x, w, b, g, spec, pointwise, col_ptr](const detail::Node& self) {
                               double* gx = grad_of(x);
                               double* gw = grad_of(w);
                               double* gb = b.defined() ? grad_of(b) : nullptr;
                               ConstMatMap wm(w.values().data(), g.co, g.rows());
                               std::vector<double> dcols(pointwise ? 0 : g.rows() * g.cols());
                               for (std::size_t i = 0; i < g.n; ++i) {
                                 ConstMatMap go(self.grad.data() + i * g.co * g.cols(), g.co, g.cols());
                                 if (gw) {
                                   MatMap(gw, g.co, g.rows()).noalias() +=
                                       go * ConstMatMap(col_ptr(i), g.rows(), g.cols()).transpose();
                                 }
                                 if (gb) {
                                   // Plain loop: Eigen's vectorized sum peels by address, which breaks
                                   // run-to-run reproducibility.
                                   const double* row = self.grad.data() + i * g.co * g.cols();
                                   for (std::size_t c = 0; c < g.co; ++c, row += g.cols()) {
                                     gb[c] += std::accumulate(row, row + g.cols(), 0.0);
                                   }
                                 }
                                 if (gx) {
                                   double* gxi = gx + i * g.c * g.h * g.w;
                                   if (pointwise) {
                                     MatMap(gxi, g.rows(), g.cols()).noalias() += wm.transpose() * go;
                                   } else {
                                     MatMap(dcols.data(), g.rows(), g.cols()).noalias() = wm.transpose() * go;
                                     col2im_add(dcols.data(), g, spec, gxi);
                                   }
                                 }
                               }
                             });
}

Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank("conv1x1 input", x, 4);
  require_rank("conv1x1 weight", w, 4);
  if (w.shape()[2] != 1 || w.shape()[3] != 1) throw DimensionError("conv1x1: weight is not 1x1, " + shape_str(w.shape()));
  if (w.shape()[1] != x.shape()[1]) {
    throw DimensionError("conv1x1: input channel axis (1) has " + std::to_string(x.shape()[1]) + ", weight expects " +
                         std::to_string(w.shape()[1]));
  }
  return conv2d(x, w, b, ConvSpec::square(w.shape()[1], w.shape()[0], 1));
}

// ---------------------------------------------------------------------------
// Normalisation

Tensor batchnorm2d(const Tensor& x, BatchNorm& bn, Mode mode, const BnOptions& options) {
  require_rank("batchnorm2d", x, 4);
  const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  if (bn.channels() != c || bn.beta.numel() != c) {
    throw DimensionError("batchnorm2d: channel axis (1) has " + std::to_string(c) + ", parameters have " +
                         std::to_string(bn.channels()));
  }
  const std::size_t count = n * hw;
  auto xv = x.values();
  auto gamma = bn.gamma.values();
  auto beta = bn.beta.values();
  std::vector<double> out(x.numel());

  if (mode == Mode::kEval) {
    auto rm = bn.running_mean.values();
    auto rv = bn.running_var.values();
    auto inv_std = std::make_shared<std::vector<double>>(c);
    for (std::size_t ch = 0; ch < c; ++ch) (*inv_std)[ch] = 1.0 / std::sqrt(rv[ch] + options.eps);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (i * c + ch) * hw;
        const double s = gamma[ch] * (*inv_std)[ch];
        for (std::size_t p = 0; p < hw; ++p) out[base + p] = (xv[base + p] - rm[ch]) * s + beta[ch];
      }
    }
    Tensor gamma_t = bn.gamma, beta_t = bn.beta, rm_t = bn.running_mean;
    return Tensor::make_result(x.shape(), std::move(out), {x, gamma_t, beta_t},
                               [x, gamma_t, beta_t, rm_t, inv_std, n, c, hw](const detail::Node& self) {
                                 double* gx = grad_of(x);
                                 double* gg = grad_of(gamma_t);
                                 double* gb = grad_of(beta_t);
                                 auto xv = x.values();
                                 auto gamma = gamma_t.values();
                                 auto rm = rm_t.values();
                                 for (std::size_t i = 0; i < n; ++i) {
                                   for (std::size_t ch = 0; ch < c; ++ch) {
                                     const std::size_t base = (i * c + ch) * hw;
                                     for (std::size_t p = 0; p < hw; ++p) {
                                       const double dy = self.grad[base + p];
                                       if (gx) gx[base + p] += dy * gamma[ch] * (*inv_std)[ch];
                                       if (gg) gg[ch] += dy * (xv[base + p] - rm[ch]) * (*inv_std)[ch];
                                       if (gb) gb[ch] += dy;
                                     }
                                   }
                                 }
                               });
  }

  if (count < 2) {
    throw DegenerateError("batchnorm2d: train mode needs more than one value per channel (got N*H*W = " +
                          std::to_string(count) + ")");
  }
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(c);
  std::vector<double> batch_mean(c, 0.0), batch_var(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) s += xv[base + p];
    }
    const double mu = s / static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) ss += (xv[base + p] - mu) * (xv[base + p] - mu);
    }
    const double var = ss / static_cast<double>(count);
    batch_mean[ch] = mu;
    batch_var[ch] = var;
    (*inv_std)[ch] = 1.0 / std::sqrt(var + options.eps);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        const double h = (xv[base + p] - mu) * (*inv_std)[ch];
        (*xhat)[base + p] = h;
        out[base + p] = gamma[ch] * h + beta[ch];
      }
    }
  }
  {
    auto rm = bn.running_mean.mutable_values();
    auto rv = bn.running_var.mutable_values();
    const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      rm[ch] = (1.0 - options.momentum) * rm[ch] + options.momentum * batch_mean[ch];
      rv[ch] = (1.0 - options.momentum) * rv[ch] + options.momentum * batch_var[ch] * unbias;
    }
  }
  Tensor gamma_t = bn.gamma, beta_t = bn.beta;
  return Tensor::make_result(x.shape(), std::move(out), {x, gamma_t, beta_t},
                             [x, gamma_t, beta_t, xhat, inv_std, n, c, hw](const detail::Node& self) {
                               double* gx = grad_of(x);
                               double* gg = grad_of(gamma_t);
                               double* gb = grad_of(beta_t);
                               auto gamma = gamma_t.values();
                               const double m = static_cast<double>(n * hw);
                               for (std::size_t ch = 0; ch < c; ++ch) {
                                 double sum_dy = 0.0, sum_dy_xhat = 0.0;
                                 for (std::size_t i = 0; i < n; ++i) {
                                   const std::size_t base = (i * c + ch) * hw;
                                   for (std::size_t p = 0; p < hw; ++p) {
                                     sum_dy += self.grad[base + p];
                                     sum_dy_xhat += self.grad[base + p] * (*xhat)[base + p];
                                   }
                                 }
                                 if (gg) gg[ch] += sum_dy_xhat;
                                 if (gb) gb[ch] += sum_dy;
                                 if (!gx) continue;
                                 const double k = gamma[ch] * (*inv_std)[ch] / m;
                                 for (std::size_t i = 0; i < n; ++i) {
                                   const std::size_t base = (i * c + ch) * hw;
                                   for (std::size_t p = 0; p < hw; ++p) {
                                     gx[base + p] +=
                                         k * (m * self.grad[base + p] - sum_dy - (*xhat)[base + p] * sum_dy_xhat);
                                   }
                                 }
                               }
                             });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: rank 0");
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: trailing axis has " + std::to_string(d) + ", parameters have " +
                         std::to_string(gamma.numel()));
  }
  const std::size_t rows = x.numel() / d;
  auto xv = x.values();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    const double mu = std::accumulate(row, row + d, 0.0) / static_cast<double>(d);
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += (row[j] - mu) * (row[j] - mu);
    (*inv_std)[r] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * (*inv_std)[r];
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gamma.values()[j] * h + beta.values()[j];
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, gamma, beta},
                             [x, gamma, beta, xhat, inv_std, rows, d](const detail::Node& self) {
                               double* gx = grad_of(x);
                               double* gg = grad_of(gamma);
                               double* gb = grad_of(beta);
                               const double dd = static_cast<double>(d);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 double sum_g = 0.0, sum_gx = 0.0;
                                 for (std::size_t j = 0; j < d; ++j) {
                                   const double dy = self.grad[r * d + j];
                                   if (gg) gg[j] += dy * (*xhat)[r * d + j];
                                   if (gb) gb[j] += dy;
                                   const double gh = dy * gamma.values()[j];
                                   sum_g += gh;
                                   sum_gx += gh * (*xhat)[r * d + j];
                                 }
                                 if (!gx) continue;
                                 for (std::size_t j = 0; j < d; ++j) {
                                   const double gh = self.grad[r * d + j] * gamma.values()[j];
                                   gx[r * d + j] +=
                                       (*inv_std)[r] / dd * (dd * gh - sum_g - (*xhat)[r * d + j] * sum_gx);
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Spatial

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4);
  const std::size_t nc = x.shape()[0] * x.shape()[1];
  const std::size_t hw = x.shape()[2] * x.shape()[3];
  std::vector<double> out(nc);
  auto xv = x.values();
  for (std::size_t i = 0; i < nc; ++i) {
    out[i] = std::accumulate(xv.begin() + i * hw, xv.begin() + (i + 1) * hw, 0.0) / static_cast<double>(hw);
  }
  return Tensor::make_result({x.shape()[0], x.shape()[1]}, std::move(out), {x}, [x, nc, hw](const detail::Node& self) {
    if (double* g = grad_of(x)) {
      for (std::size_t i = 0; i < nc; ++i) {
        const double v = self.grad[i] / static_cast<double>(hw);
        for (std::size_t p = 0; p < hw; ++p) g[i * hw + p] += v;
      }
    }
  });
}

Tensor resize_avg(const Tensor& x, std::size_t h, std::size_t w) {
  require_rank("resize_avg", x, 4);
  const std::size_t H = x.shape()[2], W = x.shape()[3];
  if (h == 0 || w == 0 || H % h != 0 || W % w != 0) {
    throw DimensionError("resize_avg: " + std::to_string(H) + "x" + std::to_string(W) + " -> " + std::to_string(h) + "x" +
                         std::to_string(w) + " is not an integer-factor reduction");
  }
  const std::size_t fh = H / h, fw = W / w, nc = x.shape()[0] * x.shape()[1];
  const double inv = 1.0 / static_cast<double>(fh * fw);
  std::vector<double> out(nc * h * w, 0.0);
  auto xv = x.values();
  for (std::size_t i = 0; i < nc; ++i) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) out[(i * h + y / fh) * w + xx / fw] += xv[(i * H + y) * W + xx] * inv;
    }
  }
  return Tensor::make_result({x.shape()[0], x.shape()[1], h, w}, std::move(out), {x},
                             [x, nc, H, W, h, w, fh, fw, inv](const detail::Node& self) {
                               if (double* g = grad_of(x)) {
                                 for (std::size_t i = 0; i < nc; ++i) {
                                   for (std::size_t y = 0; y < H; ++y) {
                                     for (std::size_t xx = 0; xx < W; ++xx) {
                                       g[(i * H + y) * W + xx] += self.grad[(i * h + y / fh) * w + xx / fw] * inv;
                                     }
                                   }
                                 }
                               }
                             });
}

Tensor upsample_nearest(const Tensor& x, std::size_t h, std::size_t w) {
  require_rank("upsample_nearest", x, 4);
  const std::size_t H = x.shape()[2], W = x.shape()[3];
  if (h % H != 0 || w % W != 0) throw DimensionError("upsample_nearest: target is not an integer multiple of the source");
  const std::size_t fh = h / H, fw = w / W, nc = x.shape()[0] * x.shape()[1];
  std::vector<double> out(nc * h * w);
  auto xv = x.values();
  for (std::size_t i = 0; i < nc; ++i) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) out[(i * h + y) * w + xx] = xv[(i * H + y / fh) * W + xx / fw];
    }
  }
  return Tensor::make_result({x.shape()[0], x.shape()[1], h, w}, std::move(out), {x},
                             [x, nc, H, W, h, w, fh, fw](const detail::Node& self) {
                               if (double* g = grad_of(x)) {
                                 for (std::size_t i = 0; i < nc; ++i) {
                                   for (std::size_t y = 0; y < h; ++y) {
                                     for (std::size_t xx = 0; xx < w; ++xx) {
                                       g[(i * H + y / fh) * W + xx / fw] += self.grad[(i * h + y) * w + xx];
                                     }
                                   }
                                 }
                               }
                             });
}

namespace {

// Gather-style op where out[i] = x[src[i]] and src is a bijection.
Tensor gather_permutation(const Tensor& x, Shape shape, std::shared_ptr<std::vector<std::size_t>> src) {
  auto xv = x.values();
  std::vector<double> out(src->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*src)[i]];
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [x, src](const detail::Node& self) {
    if (double* g = grad_of(x)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*src)[i]] += self.grad[i];
    }
  });
}

}  // namespace

Tensor flip_horizontal(const Tensor& x) {
  require_rank("flip_horizontal", x, 4);
  const std::size_t W = x.shape()[3];
  auto src = std::make_shared<std::vector<std::size_t>>(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t col = i % W;
    (*src)[i] = i - col + (W - 1 - col);
  }
  return gather_permutation(x, x.shape(), std::move(src));
}

Tensor flip_vertical(const Tensor& x) {
  require_rank("flip_vertical", x, 4);
  const std::size_t H = x.shape()[2], W = x.shape()[3];
  auto src = std::make_shared<std::vector<std::size_t>>(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t plane = i / (H * W);
    const std::size_t row = (i / W) % H;
    (*src)[i] = (plane * H + (H - 1 - row)) * W + i % W;
  }
  return gather_permutation(x, x.shape(), std::move(src));
}

Tensor crop(const Tensor& x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  require_rank("crop", x, 4);
  const std::size_t H = x.shape()[2], W = x.shape()[3];
  if (h == 0 || w == 0 || top + h > H || left + w > W) {
    throw DimensionError("crop: window " + std::to_string(h) + "x" + std::to_string(w) + " at (" + std::to_string(top) +
                         "," + std::to_string(left) + ") exceeds " + std::to_string(H) + "x" + std::to_string(W));
  }
  const std::size_t nc = x.shape()[0] * x.shape()[1];
  std::vector<double> out(nc * h * w);
  auto xv = x.values();
  for (std::size_t i = 0; i < nc; ++i) {
    for (std::size_t y = 0; y < h; ++y) {
      std::copy_n(xv.begin() + (i * H + top + y) * W + left, w, out.begin() + (i * h + y) * w);
    }
  }
  return Tensor::make_result({x.shape()[0], x.shape()[1], h, w}, std::move(out), {x},
                             [x, nc, H, W, h, w, top, left](const detail::Node& self) {
                               if (double* g = grad_of(x)) {
                                 for (std::size_t i = 0; i < nc; ++i) {
                                   for (std::size_t y = 0; y < h; ++y) {
                                     for (std::size_t xx = 0; xx < w; ++xx) {
                                       g[(i * H + top + y) * W + left + xx] += self.grad[(i * h + y) * w + xx];
                                     }
                                   }
                                 }
                               }
                             });
}

namespace detail {

KinkProbe::KinkProbe() : previous_(g_probe) { g_probe = this; }
KinkProbe::~KinkProbe() { g_probe = previous_; }
KinkProbe* KinkProbe::active() { return g_probe; }

}  // namespace detail

}  // namespace dgiqa
