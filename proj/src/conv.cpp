#include <Eigen/Core>
#include <cmath>

#include "evs/ops.hpp"

namespace evs {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
  std::size_t b, c, h, w;
  std::size_t o, kh, kw;
  std::size_t oh, ow;
  Conv2dOptions opt;

  std::size_t k_rows() const { return c * kh * kw; }
  std::size_t out_pixels() const { return oh * ow; }
  bool is_pointwise() const {
    return kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0;
  }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, const Tensor& bias,
                           const Conv2dOptions& opt) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be [B,C,H,W], got " + shape_str(input.shape()));
  if (weight.rank() != 4) {
    throw ShapeError("conv2d: weight must be [O,C,kh,kw], got " + shape_str(weight.shape()));
  }
  if (opt.stride < 1 || opt.dilation < 1) throw ShapeError("conv2d: stride and dilation must be >= 1");
  ConvGeometry g{};
  g.b = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.o = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.opt = opt;
  if (weight.dim(1) != g.c) {
    throw ShapeError("conv2d: input has " + std::to_string(g.c) + " channels but weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.o)) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(g.o) + "], got " + shape_str(bias.shape()));
  }
  const std::size_t span_h = opt.dilation * (g.kh - 1) + 1;
  const std::size_t span_w = opt.dilation * (g.kw - 1) + 1;
  if (g.h + 2 * opt.padding < span_h || g.w + 2 * opt.padding < span_w) {
    throw ShapeError("conv2d: kernel span " + std::to_string(span_h) + "x" + std::to_string(span_w) +
                     " exceeds padded input " + std::to_string(g.h + 2 * opt.padding) + "x" +
                     std::to_string(g.w + 2 * opt.padding));
  }
  g.oh = (g.h + 2 * opt.padding - span_h) / opt.stride + 1;
  g.ow = (g.w + 2 * opt.padding - span_w) / opt.stride + 1;
  return g;
}

// col[(ci*kh+ky)*kw+kx, oy*ow+ox]
void im2col(const ConvGeometry& g, const double* img, double* col) {
  const auto& o = g.opt;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    const double* plane = img + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((ci * g.kh + ky) * g.kw + kx) * g.out_pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * o.stride + ky * o.dilation) - static_cast<long>(o.padding);
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.ow, 0.0);
            continue;
          }
          const double* src = plane + iy * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * o.stride + kx * o.dilation) - static_cast<long>(o.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* img) {
  const auto& o = g.opt;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    double* plane = img + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((ci * g.kh + ky) * g.kw + kx) * g.out_pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * o.stride + ky * o.dilation) - static_cast<long>(o.padding);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = plane + iy * g.w;
          const double* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * o.stride + kx * o.dilation) - static_cast<long>(o.padding);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// Shared GEMM stage for conv2d and deform_conv2d: out_b = W * col_b + bias.
void conv_gemm_forward(const double* weight, const double* bias, const double* col, std::size_t o,
                       std::size_t k, std::size_t n, double* out) {
  MapMat om(out, o, n);
  om.noalias() = CMapMat(weight, o, k) * CMapMat(col, k, n);
  if (bias) {
    for (std::size_t r = 0; r < o; ++r) om.row(r).array() += bias[r];
  }
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt) {
  const ConvGeometry g = conv_geometry(input, weight, bias, opt);
  const bool track = autograd::should_record({&input, &weight, &bias});
  Tensor out = Tensor::zeros({g.b, g.o, g.oh, g.ow});
  if (track) out.set_requires_grad(true);

  const std::size_t k = g.k_rows(), n = g.out_pixels();
  Buffer col(g.is_pointwise() ? 0 : k * n);
  auto xd = input.data();
  auto od = out.data();
  const double* bias_ptr = bias.defined() ? bias.data().data() : nullptr;
  for (std::size_t bi = 0; bi < g.b; ++bi) {
    const double* img = xd.data() + bi * g.c * g.h * g.w;
    const double* cols = img;
    if (!g.is_pointwise()) {
      im2col(g, img, col.data());
      cols = col.data();
    }
    conv_gemm_forward(weight.data().data(), bias_ptr, cols, g.o, k, n, od.data() + bi * g.o * n);
  }
  autograd::check_finite("conv2d", out);

  if (track) {
    Tape::current().record("conv2d", out, [input, weight, bias, g](std::span<const double> grad) {
      const std::size_t k = g.k_rows(), n = g.out_pixels();
      Buffer col(g.is_pointwise() ? 0 : k * n);
      Buffer gcol(k * n);
      auto xd = input.data();
      CMapMat wm(weight.data().data(), g.o, k);
      for (std::size_t bi = 0; bi < g.b; ++bi) {
        CMapMat gout(grad.data() + bi * g.o * n, g.o, n);
        const double* img = xd.data() + bi * g.c * g.h * g.w;
        if (weight.requires_grad()) {
          const double* cols = img;
          if (!g.is_pointwise()) {
            im2col(g, img, col.data());
            cols = col.data();
          }
          MapMat(autograd::grad_of(weight).data(), g.o, k).noalias() +=
              gout * CMapMat(cols, k, n).transpose();
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gb = autograd::grad_of(bias);
          for (std::size_t r = 0; r < g.o; ++r) gb[r] += gout.row(r).sum();
        }
        if (input.requires_grad()) {
          double* gimg = autograd::grad_of(input).data() + bi * g.c * g.h * g.w;
          if (g.is_pointwise()) {
            MapMat(gimg, k, n).noalias() += wm.transpose() * gout;
          } else {
            MapMat(gcol.data(), k, n).noalias() = wm.transpose() * gout;
            col2im_add(g, gcol.data(), gimg);
          }
        }
      }
    });
  }
  return out;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   Mode mode) {
  if (input.rank() != 4) throw ShapeError("batchnorm2d: input must be [B,C,H,W], got " + shape_str(input.shape()));
  const std::size_t b = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  for (const Tensor* p : {&gamma, &beta, static_cast<const Tensor*>(&state.running_mean), static_cast<const Tensor*>(&state.running_var)}) {
    if (p->numel() != c) {
      throw ShapeError("batchnorm2d: parameter length " + std::to_string(p->numel()) +
                       " does not match " + std::to_string(c) + " channels");
    }
  }
  const std::size_t count = b * hw;
  if (mode == Mode::Train && count < 2) {
    throw ShapeError("batchnorm2d: train mode needs at least 2 values per channel");
  }

  std::vector<double> mu(c), inv_std(c);
  auto xd = input.data();
  if (mode == Mode::Train) {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t bi = 0; bi < b; ++bi) {
        const double* p = xd.data() + (bi * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t bi = 0; bi < b; ++bi) {
        const double* p = xd.data() + (bi * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) v += (p[i] - m) * (p[i] - m);
      }
      const double var = v / static_cast<double>(count);
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = v / static_cast<double>(count - 1);
      rm[ch] = (1.0 - state.momentum) * rm[ch] + state.momentum * m;
      rv[ch] = (1.0 - state.momentum) * rv[ch] + state.momentum * unbiased;
    }
  } else {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = rm[ch];
      inv_std[ch] = 1.0 / std::sqrt(rv[ch] + state.eps);
    }
  }

  const bool track = autograd::should_record({&input, &gamma, &beta});
  Tensor out = Tensor::zeros(input.shape());
  if (track) out.set_requires_grad(true);
  auto od = out.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = xd.data() + (bi * c + ch) * hw;
      double* q = od.data() + (bi * c + ch) * hw;
      const double a = gd[ch] * inv_std[ch];
      for (std::size_t i = 0; i < hw; ++i) q[i] = a * (p[i] - mu[ch]) + bd[ch];
    }
  }
  autograd::check_finite("batchnorm2d", out);

  if (track) {
    Tape::current().record(
        "batchnorm2d", out, [input, gamma, beta, mu, inv_std, mode, b, c, hw](std::span<const double> g) {
          auto xd = input.data();
          auto gd = gamma.data();
          const double n = static_cast<double>(b * hw);
          for (std::size_t ch = 0; ch < c; ++ch) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t bi = 0; bi < b; ++bi) {
              const std::size_t base = (bi * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i) {
                const double xhat = (xd[base + i] - mu[ch]) * inv_std[ch];
                sum_g += g[base + i];
                sum_gx += g[base + i] * xhat;
              }
            }
            if (gamma.requires_grad()) autograd::grad_of(gamma)[ch] += sum_gx;
            if (beta.requires_grad()) autograd::grad_of(beta)[ch] += sum_g;
            if (!input.requires_grad()) continue;
            auto gx = autograd::grad_of(input);
            const double a = gd[ch] * inv_std[ch];
            for (std::size_t bi = 0; bi < b; ++bi) {
              const std::size_t base = (bi * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i) {
                if (mode == Mode::Train) {
                  const double xhat = (xd[base + i] - mu[ch]) * inv_std[ch];
                  gx[base + i] += a * (g[base + i] - sum_g / n - xhat * sum_gx / n);
                } else {
                  gx[base + i] += a * g[base + i];
                }
              }
            }
          }
        });
  }
  return out;
}

}  // namespace evs
