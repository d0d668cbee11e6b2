#include "evs/nn.hpp"

#include <cmath>

namespace evs::nn {

std::vector<NamedTensor> Registry::state() const {
  std::vector<NamedTensor> all = params;
  all.insert(all.end(), buffers.begin(), buffers.end());
  return all;
}

std::size_t Registry::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

Tensor kaiming(const Shape& shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(shape, std::move(v), true);
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, Conv2dOptions o, Init init,
               bool with_bias)
    : opt(o) {
  const Shape shape{out, in, kernel, kernel};
  weight = init == Init::Zero ? Tensor::zeros(shape, true) : kaiming(shape, in * kernel * kernel, rng);
  if (with_bias) bias = Tensor::zeros({out}, true);
}

Conv2d Conv2d::same(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, Init init,
                    std::size_t dilation) {
  return Conv2d(in, out, kernel, rng, {1, dilation * (kernel - 1) / 2, dilation}, init);
}

void Conv2d::collect(Registry& r, const std::string& prefix) const {
  r.param(prefix + ".weight", weight);
  if (bias.defined()) r.param(prefix + ".bias", bias);
}

BatchNorm2d::BatchNorm2d(std::size_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)), beta(Tensor::zeros({channels}, true)) {
  state.running_mean = Tensor::zeros({channels});
  state.running_var = Tensor::full({channels}, 1.0);
}

void BatchNorm2d::collect(Registry& r, const std::string& prefix) const {
  r.param(prefix + ".gamma", gamma);
  r.param(prefix + ".beta", beta);
  r.buffer(prefix + ".running_mean", state.running_mean);
  r.buffer(prefix + ".running_var", state.running_var);
}

ConvBnRelu::ConvBnRelu(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, Conv2dOptions opt)
    : conv(in, out, kernel, rng, opt, Init::Kaiming, false), bn(out) {}

void ConvBnRelu::collect(Registry& r, const std::string& prefix) const {
  conv.collect(r, prefix + ".conv");
  bn.collect(r, prefix + ".bn");
}

DeformConv2d::DeformConv2d(std::size_t in, std::size_t out, Rng& rng, Init init)
    : offset(Conv2d::same(in, 18, 3, rng, Init::Zero)),
      weight(init == Init::Zero ? Tensor::zeros({out, in, 3, 3}, true) : kaiming({out, in, 3, 3}, in * 9, rng)),
      bias(Tensor::zeros({out}, true)) {}

Tensor DeformConv2d::forward(const Tensor& x) const {
  return deform_conv2d(x, offset.forward(x), weight, bias);
}

void DeformConv2d::collect(Registry& r, const std::string& prefix) const {
  offset.collect(r, prefix + ".offset");
  r.param(prefix + ".weight", weight);
  r.param(prefix + ".bias", bias);
}

}  // namespace evs::nn
