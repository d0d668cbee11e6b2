#pragma once

#include <vector>

#include "evs/tensor.hpp"

// Differentiable primitives. All image-shaped tensors are NCHW.
namespace evs {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
/// elu(x) + 1, a strictly positive feature map.
Tensor elu_plus_one(const Tensor& x);
/// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, std::size_t axis);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
};

/// Cross-correlation; bias may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& opt = {});

enum class Mode { Train, Eval };

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Train mode normalizes with batch statistics and updates the running
/// estimates in place; eval mode uses the running estimates.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, Mode mode);

Tensor maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride);

/// Half-pixel-centre bilinear resampling to (out_h, out_w).
Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);
Tensor upsample_bilinear(const Tensor& input, std::size_t factor);

/// Deformable 3x3-style convolution, stride 1, "same" padding. offsets holds a
/// (dy, dx) pair per kernel tap: channel 2t is dy, 2t+1 is dx, taps row-major.
/// Samples outside the image read as zero, so zero offsets reproduce conv2d.
Tensor deform_conv2d(const Tensor& input, const Tensor& offsets, const Tensor& weight,
                     const Tensor& bias, std::size_t dilation = 1);

struct WarpResult {
  Tensor output;
  Tensor valid;  // [B,1,H,W], 1 where w - disparity lies inside the image
};

/// output(h, w) = input(h, w - disparity(h, w)), linear along the row with
/// clamp-to-border.
WarpResult grid_warp(const Tensor& input, const Tensor& disparity);

}  // namespace evs
