#pragma once

#include <random>
#include <string>
#include <vector>

#include "evs/checkpoint.hpp"
#include "evs/ops.hpp"

namespace evs::nn {

using Rng = std::mt19937_64;

/// Named view over a model's learnable parameters and non-learnable buffers.
struct Registry {
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> buffers;

  void param(const std::string& name, const Tensor& t) { params.push_back({name, t}); }
  void buffer(const std::string& name, const Tensor& t) { buffers.push_back({name, t}); }
  /// params followed by buffers; the checkpoint layout.
  std::vector<NamedTensor> state() const;
  std::size_t param_count() const;
};

enum class Init { Kaiming, Zero };

/// Normal(0, sqrt(2 / fan_in)) leaf tensor.
Tensor kaiming(const Shape& shape, std::size_t fan_in, Rng& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, Conv2dOptions opt = {},
         Init init = Init::Kaiming, bool with_bias = true);

  /// kernel x kernel, stride 1, padding keeping the spatial size.
  static Conv2d same(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng,
                     Init init = Init::Kaiming, std::size_t dilation = 1);

  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, opt); }
  void collect(Registry& r, const std::string& prefix) const;

  Tensor weight, bias;
  Conv2dOptions opt;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  Tensor forward(const Tensor& x, Mode mode) { return batchnorm2d(x, gamma, beta, state, mode); }
  void collect(Registry& r, const std::string& prefix) const;

  Tensor gamma, beta;
  BatchNormState state;
};

/// conv -> BN -> ReLU
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, Conv2dOptions opt);

  Tensor forward(const Tensor& x, Mode mode) { return relu(bn.forward(conv.forward(x), mode)); }
  void collect(Registry& r, const std::string& prefix) const;

  Conv2d conv;
  BatchNorm2d bn;
};

/// 3x3 deformable convolution whose per-tap offsets come from a plain 3x3
/// conv over the same input. The offset predictor starts at zero.
class DeformConv2d {
 public:
  DeformConv2d() = default;
  DeformConv2d(std::size_t in, std::size_t out, Rng& rng, Init init = Init::Kaiming);

  Tensor forward(const Tensor& x) const;
  void collect(Registry& r, const std::string& prefix) const;

  Conv2d offset;
  Tensor weight, bias;
};

}  // namespace evs::nn
