#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "evs/ops.hpp"

namespace evs {

void conv_gemm_forward(const double* weight, const double* bias, const double* col, std::size_t o,
                       std::size_t k, std::size_t n, double* out);

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// Bilinear read with zero outside the image, plus the four corner indices
// and weights so backward can scatter without recomputing.
struct BilinearSample {
  long y0, x0;
  double ly, lx;
};

inline double pixel_or_zero(const double* plane, long h, long w, long y, long x) {
  return (y >= 0 && y < h && x >= 0 && x < w) ? plane[y * w + x] : 0.0;
}

inline BilinearSample locate(double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  return {static_cast<long>(fy), static_cast<long>(fx), y - fy, x - fx};
}

inline double sample(const double* plane, long h, long w, const BilinearSample& s) {
  const double v00 = pixel_or_zero(plane, h, w, s.y0, s.x0);
  const double v01 = pixel_or_zero(plane, h, w, s.y0, s.x0 + 1);
  const double v10 = pixel_or_zero(plane, h, w, s.y0 + 1, s.x0);
  const double v11 = pixel_or_zero(plane, h, w, s.y0 + 1, s.x0 + 1);
  return (1.0 - s.ly) * ((1.0 - s.lx) * v00 + s.lx * v01) + s.ly * ((1.0 - s.lx) * v10 + s.lx * v11);
}

struct DeformGeometry {
  std::size_t b, c, h, w, o, kh, kw, dilation;
  long pad_h, pad_w;
  std::size_t taps() const { return kh * kw; }
};

DeformGeometry deform_geometry(const Tensor& input, const Tensor& offsets, const Tensor& weight,
                               const Tensor& bias, std::size_t dilation) {
  if (input.rank() != 4) throw ShapeError("deform_conv2d: input must be [B,C,H,W], got " + shape_str(input.shape()));
  if (weight.rank() != 4) throw ShapeError("deform_conv2d: weight must be [O,C,kh,kw], got " + shape_str(weight.shape()));
  if (dilation < 1) throw ShapeError("deform_conv2d: dilation must be >= 1");
  DeformGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0),
                   weight.dim(2), weight.dim(3), dilation, 0, 0};
  if (weight.dim(1) != g.c) {
    throw ShapeError("deform_conv2d: input has " + std::to_string(g.c) + " channels but weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ShapeError("deform_conv2d: kernel sizes must be odd");
  const Shape want{g.b, 2 * g.taps(), g.h, g.w};
  if (offsets.shape() != want) {
    throw ShapeError("deform_conv2d: offsets must be " + shape_str(want) + ", got " + shape_str(offsets.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.o)) {
    throw ShapeError("deform_conv2d: bias must be [" + std::to_string(g.o) + "]");
  }
  g.pad_h = static_cast<long>(dilation * (g.kh - 1) / 2);
  g.pad_w = static_cast<long>(dilation * (g.kw - 1) / 2);
  return g;
}

inline BilinearSample tap_location(const DeformGeometry& g, const double* off, std::size_t t,
                                   std::size_t y, std::size_t x) {
  const std::size_t hw = g.h * g.w;
  const std::size_t ky = t / g.kw, kx = t % g.kw;
  const double dy = off[(2 * t) * hw + y * g.w + x];
  const double dx = off[(2 * t + 1) * hw + y * g.w + x];
  const double py = static_cast<double>(y) - static_cast<double>(g.pad_h) +
                    static_cast<double>(ky * g.dilation) + dy;
  const double px = static_cast<double>(x) - static_cast<double>(g.pad_w) +
                    static_cast<double>(kx * g.dilation) + dx;
  return locate(py, px);
}

void deform_im2col(const DeformGeometry& g, const double* img, const double* off, double* col) {
  const std::size_t hw = g.h * g.w;
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
  for (std::size_t t = 0; t < g.taps(); ++t) {
    for (std::size_t y = 0; y < g.h; ++y) {
      for (std::size_t x = 0; x < g.w; ++x) {
        const BilinearSample s = tap_location(g, off, t, y, x);
        for (std::size_t ci = 0; ci < g.c; ++ci) {
          col[(ci * g.taps() + t) * hw + y * g.w + x] = sample(img + ci * hw, h, w, s);
        }
      }
    }
  }
}

}  // namespace

Tensor deform_conv2d(const Tensor& input, const Tensor& offsets, const Tensor& weight, const Tensor& bias,
                     std::size_t dilation) {
  const DeformGeometry g = deform_geometry(input, offsets, weight, bias, dilation);
  const bool track = autograd::should_record({&input, &offsets, &weight, &bias});
  Tensor out = Tensor::zeros({g.b, g.o, g.h, g.w});
  if (track) out.set_requires_grad(true);

  const std::size_t hw = g.h * g.w, k = g.c * g.taps();
  Buffer col(k * hw);
  auto xd = input.data();
  auto offd = offsets.data();
  auto od = out.data();
  const double* bias_ptr = bias.defined() ? bias.data().data() : nullptr;
  for (std::size_t bi = 0; bi < g.b; ++bi) {
    deform_im2col(g, xd.data() + bi * g.c * hw, offd.data() + bi * 2 * g.taps() * hw, col.data());
    conv_gemm_forward(weight.data().data(), bias_ptr, col.data(), g.o, k, hw, od.data() + bi * g.o * hw);
  }
  autograd::check_finite("deform_conv2d", out);

  if (track) {
    Tape::current().record("deform_conv2d", out, [input, offsets, weight, bias, g](std::span<const double> grad) {
      const std::size_t hw = g.h * g.w, k = g.c * g.taps();
      const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
      Buffer col(k * hw), gcol(k * hw);
      auto xd = input.data();
      auto offd = offsets.data();
      CMapMat wm(weight.data().data(), g.o, k);
      for (std::size_t bi = 0; bi < g.b; ++bi) {
        const double* img = xd.data() + bi * g.c * hw;
        const double* off = offd.data() + bi * 2 * g.taps() * hw;
        CMapMat gout(grad.data() + bi * g.o * hw, g.o, hw);
        if (weight.requires_grad()) {
          deform_im2col(g, img, off, col.data());
          MapMat(autograd::grad_of(weight).data(), g.o, k).noalias() += gout * CMapMat(col.data(), k, hw).transpose();
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gb = autograd::grad_of(bias);
          for (std::size_t r = 0; r < g.o; ++r) gb[r] += gout.row(r).sum();
        }
        if (!input.requires_grad() && !offsets.requires_grad()) continue;
        MapMat(gcol.data(), k, hw).noalias() = wm.transpose() * gout;
        double* gimg = input.requires_grad() ? autograd::grad_of(input).data() + bi * g.c * hw : nullptr;
        double* goff = offsets.requires_grad() ? autograd::grad_of(offsets).data() + bi * 2 * g.taps() * hw : nullptr;
        for (std::size_t t = 0; t < g.taps(); ++t) {
          for (std::size_t y = 0; y < g.h; ++y) {
            for (std::size_t x = 0; x < g.w; ++x) {
              const BilinearSample s = tap_location(g, off, t, y, x);
              const double w00 = (1.0 - s.ly) * (1.0 - s.lx), w01 = (1.0 - s.ly) * s.lx;
              const double w10 = s.ly * (1.0 - s.lx), w11 = s.ly * s.lx;
              const bool in_y0 = s.y0 >= 0 && s.y0 < h, in_y1 = s.y0 + 1 >= 0 && s.y0 + 1 < h;
              const bool in_x0 = s.x0 >= 0 && s.x0 < w, in_x1 = s.x0 + 1 >= 0 && s.x0 + 1 < w;
              double gdy = 0.0, gdx = 0.0;
              for (std::size_t ci = 0; ci < g.c; ++ci) {
                const double gv = gcol[(ci * g.taps() + t) * hw + y * g.w + x];
                if (gv == 0.0) continue;
                if (gimg) {
                  double* plane = gimg + ci * hw;
                  if (in_y0 && in_x0) plane[s.y0 * w + s.x0] += w00 * gv;
                  if (in_y0 && in_x1) plane[s.y0 * w + s.x0 + 1] += w01 * gv;
                  if (in_y1 && in_x0) plane[(s.y0 + 1) * w + s.x0] += w10 * gv;
                  if (in_y1 && in_x1) plane[(s.y0 + 1) * w + s.x0 + 1] += w11 * gv;
                }
                if (goff) {
                  const double* plane = img + ci * hw;
                  const double v00 = pixel_or_zero(plane, h, w, s.y0, s.x0);
                  const double v01 = pixel_or_zero(plane, h, w, s.y0, s.x0 + 1);
                  const double v10 = pixel_or_zero(plane, h, w, s.y0 + 1, s.x0);
                  const double v11 = pixel_or_zero(plane, h, w, s.y0 + 1, s.x0 + 1);
                  gdy += gv * ((1.0 - s.lx) * (v10 - v00) + s.lx * (v11 - v01));
                  gdx += gv * ((1.0 - s.ly) * (v01 - v00) + s.ly * (v11 - v10));
                }
              }
              if (goff) {
                goff[(2 * t) * hw + y * g.w + x] += gdy;
                goff[(2 * t + 1) * hw + y * g.w + x] += gdx;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

WarpResult grid_warp(const Tensor& input, const Tensor& disparity) {
  if (input.rank() != 4) throw ShapeError("grid_warp: input must be [B,C,H,W], got " + shape_str(input.shape()));
  const std::size_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Shape want{b, 1, h, w};
  if (disparity.shape() != want) {
    throw ShapeError("grid_warp: disparity must be " + shape_str(want) + ", got " + shape_str(disparity.shape()));
  }
  const std::size_t hw = h * w;
  const double max_x = static_cast<double>(w - 1);

  struct Lerp {
    std::size_t x0, x1;
    double l;
    bool valid;
  };
  std::vector<Lerp> lerps(b * hw);
  auto dd = disparity.data();
  Tensor valid = Tensor::zeros(want);
  auto vd = valid.data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = bi * hw + y * w + x;
        const double xs = static_cast<double>(x) - dd[i];
        const bool inside = xs >= 0.0 && xs <= max_x;
        const double xc = std::clamp(xs, 0.0, max_x);
        const std::size_t x0 = static_cast<std::size_t>(std::floor(xc));
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        lerps[i] = {x0, x1, xc - static_cast<double>(x0), inside};
        vd[i] = inside ? 1.0 : 0.0;
      }
    }
  }

  const bool track = autograd::should_record({&input, &disparity});
  Tensor out = Tensor::zeros(input.shape());
  if (track) out.set_requires_grad(true);
  auto xd = input.data();
  auto od = out.data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* plane = xd.data() + (bi * c + ci) * hw;
      double* dst = od.data() + (bi * c + ci) * hw;
      for (std::size_t y = 0; y < h; ++y) {
        const double* row = plane + y * w;
        for (std::size_t x = 0; x < w; ++x) {
          const Lerp& L = lerps[bi * hw + y * w + x];
          dst[y * w + x] = (1.0 - L.l) * row[L.x0] + L.l * row[L.x1];
        }
      }
    }
  }
  autograd::check_finite("grid_warp", out);

  if (track) {
    Tape::current().record("grid_warp", out, [input, disparity, lerps, b, c, h, w](std::span<const double> g) {
      const std::size_t hw = h * w;
      auto xd = input.data();
      double* gin = input.requires_grad() ? autograd::grad_of(input).data() : nullptr;
      double* gd = disparity.requires_grad() ? autograd::grad_of(disparity).data() : nullptr;
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t ci = 0; ci < c; ++ci) {
          const std::size_t base = (bi * c + ci) * hw;
          for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
              const std::size_t p = bi * hw + y * w + x;
              const Lerp& L = lerps[p];
              const double gv = g[base + y * w + x];
              if (gin) {
                gin[base + y * w + L.x0] += (1.0 - L.l) * gv;
                gin[base + y * w + L.x1] += L.l * gv;
              }
              if (gd && L.valid) {
                // d/dd of sample at x - d
                gd[p] -= gv * (xd[base + y * w + L.x1] - xd[base + y * w + L.x0]);
              }
            }
          }
        }
      }
    });
  }
  return {out, valid};
}

}  // namespace evs
