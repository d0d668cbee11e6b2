#include "evs/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace evs {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

Tensor make_output(const Shape& shape, bool track) {
  Tensor out = Tensor::zeros(shape);
  if (track) out.set_requires_grad(true);
  return out;
}

// Elementwise unary op; df receives (x, y) and returns dy/dx.
template <typename F, typename DF>
Tensor unary(const char* op, const Tensor& x, F f, DF df) {
  const bool track = autograd::should_record({&x});
  Tensor out = make_output(x.shape(), track);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = f(xd[i]);
  autograd::check_finite(op, out);
  if (track) {
    Tape::current().record(op, out, [x, out, df](std::span<const double> g) {
      auto gx = autograd::grad_of(x);
      auto xd = x.data();
      auto yd = out.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xd[i], yd[i]);
    });
  }
  return out;
}

struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const bool track = autograd::should_record({&a, &b});
  Tensor out = make_output(a.shape(), track);
  auto ad = a.data(), bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  autograd::check_finite("add", out);
  if (track) {
    Tape::current().record("add", out, [a, b](std::span<const double> g) {
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto gt = autograd::grad_of(*t);
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const bool track = autograd::should_record({&a, &b});
  Tensor out = make_output(a.shape(), track);
  auto ad = a.data(), bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
  autograd::check_finite("sub", out);
  if (track) {
    Tape::current().record("sub", out, [a, b](std::span<const double> g) {
      if (a.requires_grad()) {
        auto ga = autograd::grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = autograd::grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const bool track = autograd::should_record({&a, &b});
  Tensor out = make_output(a.shape(), track);
  auto ad = a.data(), bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  autograd::check_finite("mul", out);
  if (track) {
    Tape::current().record("mul", out, [a, b](std::span<const double> g) {
      auto ad = a.data(), bd = b.data();
      if (a.requires_grad()) {
        auto ga = autograd::grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
      }
      if (b.requires_grad()) {
        auto gb = autograd::grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor elu_plus_one(const Tensor& x) {
  return unary(
      "elu_plus_one", x, [](double v) { return v > 0.0 ? v + 1.0 : std::exp(v); },
      [](double v, double y) { return v > 0.0 ? 1.0 : y; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.shape()[i] != ref[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  const bool track = autograd::should_record(parts);
  Tensor out = make_output(out_shape, track);
  const AxisSplit os = split_at(out_shape, axis);
  auto od = out.data();
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = p.shape()[axis] * os.inner;
    auto pd = p.data();
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(pd.begin() + o * block, block, od.begin() + o * os.axis * os.inner + offset);
    }
    offset += block;
  }
  if (track) {
    Tape::current().record("concat", out, [parts, offsets, os, axis](std::span<const double> g) {
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (!parts[k].requires_grad()) continue;
        auto gp = autograd::grad_of(parts[k]);
        const std::size_t block = parts[k].shape()[axis] * os.inner;
        for (std::size_t o = 0; o < os.outer; ++o) {
          const double* src = g.data() + o * os.axis * os.inner + offsets[k];
          double* dst = gp.data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank()) throw ShapeError("slice: axis out of range for " + shape_str(x.shape()));
  if (begin >= end || end > x.shape()[axis]) {
    throw ShapeError("slice: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const bool track = autograd::should_record({&x});
  Tensor out = make_output(out_shape, track);
  const AxisSplit xs = split_at(x.shape(), axis);
  const std::size_t block = (end - begin) * xs.inner;
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t o = 0; o < xs.outer; ++o) {
    std::copy_n(xd.begin() + o * xs.axis * xs.inner + begin * xs.inner, block, od.begin() + o * block);
  }
  if (track) {
    Tape::current().record("slice", out, [x, xs, block, begin](std::span<const double> g) {
      auto gx = autograd::grad_of(x);
      for (std::size_t o = 0; o < xs.outer; ++o) {
        double* dst = gx.data() + o * xs.axis * xs.inner + begin * xs.inner;
        const double* src = g.data() + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const bool track = autograd::should_record({&x});
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc, track);
  autograd::check_finite("sum", out);
  if (track) {
    Tape::current().record("sum", out, [x](std::span<const double> g) {
      auto gx = autograd::grad_of(x);
      for (auto& v : gx) v += g[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const bool track = autograd::should_record({&a, &b});
  Tensor out = make_output({m, n}, track);
  MapMat(out.data().data(), m, n).noalias() =
      CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
  autograd::check_finite("matmul", out);
  if (track) {
    Tape::current().record("matmul", out, [a, b, m, k, n](std::span<const double> g) {
      CMapMat gm(g.data(), m, n);
      if (a.requires_grad()) {
        MapMat(autograd::grad_of(a).data(), m, k).noalias() +=
            gm * CMapMat(b.data().data(), k, n).transpose();
      }
      if (b.requires_grad()) {
        MapMat(autograd::grad_of(b).data(), k, n).noalias() +=
            CMapMat(a.data().data(), m, k).transpose() * gm;
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  const bool track = autograd::should_record({&x});
  Tensor out = make_output(x.shape(), track);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.axis * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < s.axis; ++a) mx = std::max(mx, xd[base + a * s.inner]);
      double z = 0.0;
      for (std::size_t a = 0; a < s.axis; ++a) {
        const double e = std::exp(xd[base + a * s.inner] - mx);
        od[base + a * s.inner] = e;
        z += e;
      }
      for (std::size_t a = 0; a < s.axis; ++a) od[base + a * s.inner] /= z;
    }
  }
  autograd::check_finite("softmax", out);
  if (track) {
    Tape::current().record("softmax", out, [x, out, s](std::span<const double> g) {
      auto gx = autograd::grad_of(x);
      auto y = out.data();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.axis * s.inner + in;
          double dot = 0.0;
          for (std::size_t a = 0; a < s.axis; ++a) {
            const std::size_t i = base + a * s.inner;
            dot += g[i] * y[i];
          }
          for (std::size_t a = 0; a < s.axis; ++a) {
            const std::size_t i = base + a * s.inner;
            gx[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride) {
  require_rank("maxpool2d", input, 4);
  if (kernel == 0 || stride == 0) throw ShapeError("maxpool2d: kernel and stride must be >= 1");
  const std::size_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < kernel || w < kernel) throw ShapeError("maxpool2d: kernel larger than input");
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  const bool track = autograd::should_record({&input});
  Tensor out = make_output({b, c, oh, ow}, track);
  std::vector<std::size_t> argmax(out.numel());
  auto xd = input.data();
  auto od = out.data();
  for (std::size_t p = 0; p < b * c; ++p) {
    const double* plane = xd.data() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (y * stride) * w + x * stride;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t idx = (y * stride + ky) * w + x * stride + kx;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        const std::size_t o = p * oh * ow + y * ow + x;
        od[o] = plane[best];
        argmax[o] = p * h * w + best;
      }
    }
  }
  if (track) {
    Tape::current().record("maxpool2d", out, [input, argmax](std::span<const double> g) {
      auto gx = autograd::grad_of(input);
      for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    });
  }
  return out;
}

namespace {

struct Tap1d {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<Tap1d> linear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap1d> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double l = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - l, l};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_rank("resize_bilinear", input, 4);
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: empty output size");
  const std::size_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const auto ty = linear_taps(h, out_h);
  const auto tx = linear_taps(w, out_w);
  const bool track = autograd::should_record({&input});
  Tensor out = make_output({b, c, out_h, out_w}, track);
  auto xd = input.data();
  auto od = out.data();
  for (std::size_t p = 0; p < b * c; ++p) {
    const double* src = xd.data() + p * h * w;
    double* dst = od.data() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& q = tx[x];
        dst[y * out_w + x] = a.w0 * (q.w0 * src[a.i0 * w + q.i0] + q.w1 * src[a.i0 * w + q.i1]) +
                             a.w1 * (q.w0 * src[a.i1 * w + q.i0] + q.w1 * src[a.i1 * w + q.i1]);
      }
    }
  }
  if (track) {
    Tape::current().record("resize_bilinear", out,
                           [input, ty, tx, b, c, h, w, out_h, out_w](std::span<const double> g) {
                             auto gx = autograd::grad_of(input);
                             for (std::size_t p = 0; p < b * c; ++p) {
                               double* dst = gx.data() + p * h * w;
                               const double* src = g.data() + p * out_h * out_w;
                               for (std::size_t y = 0; y < out_h; ++y) {
                                 const auto& a = ty[y];
                                 for (std::size_t x = 0; x < out_w; ++x) {
                                   const auto& q = tx[x];
                                   const double v = src[y * out_w + x];
                                   dst[a.i0 * w + q.i0] += a.w0 * q.w0 * v;
                                   dst[a.i0 * w + q.i1] += a.w0 * q.w1 * v;
                                   dst[a.i1 * w + q.i0] += a.w1 * q.w0 * v;
                                   dst[a.i1 * w + q.i1] += a.w1 * q.w1 * v;
                                 }
                               }
                             }
                           });
  }
  return out;
}

Tensor upsample_bilinear(const Tensor& input, std::size_t factor) {
  require_rank("upsample_bilinear", input, 4);
  return resize_bilinear(input, input.dim(2) * factor, input.dim(3) * factor);
}

}  // namespace evs
