#include "evs/backbone.hpp"

namespace evs {

ResidualBlock::ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, nn::Rng& rng)
    : first_(in, out, 3, rng, {stride, 1, 1}),
      second_(out, out, 3, rng, {1, 1, 1}, nn::Init::Kaiming, false),
      second_bn_(out),
      project_(stride != 1 || in != out) {
  if (project_) {
    skip_ = nn::Conv2d(in, out, 1, rng, {stride, 0, 1}, nn::Init::Kaiming, false);
    skip_bn_ = nn::BatchNorm2d(out);
  }
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
  Tensor y = second_bn_.forward(second_.forward(first_.forward(x, mode)), mode);
  Tensor skip = project_ ? skip_bn_.forward(skip_.forward(x), mode) : x;
  return relu(add(y, skip));
}

void ResidualBlock::collect(nn::Registry& r, const std::string& prefix) const {
  first_.collect(r, prefix + ".conv1");
  second_.collect(r, prefix + ".conv2");
  second_bn_.collect(r, prefix + ".bn2");
  if (project_) {
    skip_.collect(r, prefix + ".skip");
    skip_bn_.collect(r, prefix + ".skip_bn");
  }
}

DeformResidualBlock::DeformResidualBlock(std::size_t channels, nn::Rng& rng)
    : first_(channels, channels, rng), second_(channels, channels, rng), first_bn_(channels), second_bn_(channels) {}

Tensor DeformResidualBlock::forward(const Tensor& x, Mode mode) {
  Tensor y = relu(first_bn_.forward(first_.forward(x), mode));
  y = second_bn_.forward(second_.forward(y), mode);
  return relu(add(y, x));
}

void DeformResidualBlock::collect(nn::Registry& r, const std::string& prefix) const {
  first_.collect(r, prefix + ".dconv1");
  first_bn_.collect(r, prefix + ".bn1");
  second_.collect(r, prefix + ".dconv2");
  second_bn_.collect(r, prefix + ".bn2");
}

StereoBackbone::StereoBackbone(const BackboneConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
  const auto [w1, w2, w3] = cfg.widths;
  stem_ = nn::ConvBnRelu(cfg.in_channels, w1, 3, rng, {2, 1, 1});
  for (std::size_t i = 0; i < cfg.blocks_per_stage; ++i) stage1_.emplace_back(w1, w1, i == 0 ? 2 : 1, rng);
  for (std::size_t i = 0; i < cfg.blocks_per_stage; ++i) stage2_.emplace_back(i == 0 ? w1 : w2, w2, i == 0 ? 2 : 1, rng);
  stage3_down_ = nn::ConvBnRelu(w2, w3, 3, rng, {2, 1, 1});
  for (std::size_t i = 0; i < cfg.blocks_per_stage; ++i) stage3_.emplace_back(w3, rng);
  const std::array<std::size_t, 3> widths{w1, w2, w3};
  for (std::size_t l = 0; l < 3; ++l) {
    lateral_[l] = nn::Conv2d(widths[l], cfg.feature_channels, 1, rng);
    smooth_[l] = nn::Conv2d::same(cfg.feature_channels, cfg.feature_channels, 3, rng);
  }
}

FeaturePyramid StereoBackbone::encode(const Tensor& view, Mode mode) {
  if (view.rank() != 4) throw ShapeError("encode: view must be [B,C0,H,W], got " + shape_str(view.shape()));
  if (view.dim(2) % kInputMultiple != 0 || view.dim(3) % kInputMultiple != 0) {
    throw ShapeError("encode: input height and width must be multiples of 16, got " + std::to_string(view.dim(2)) +
                     "x" + std::to_string(view.dim(3)));
  }
  if (view.dim(1) != cfg_.in_channels) {
    throw ShapeError("encode: expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                     std::to_string(view.dim(1)));
  }
  Tensor x = stem_.forward(view, mode);
  for (auto& b : stage1_) x = b.forward(x, mode);
  const Tensor c4 = x;
  for (auto& b : stage2_) x = b.forward(x, mode);
  const Tensor c8 = x;
  x = stage3_down_.forward(x, mode);
  for (auto& b : stage3_) x = b.forward(x, mode);
  const Tensor c16 = x;

  Tensor p16 = lateral_[2].forward(c16);
  Tensor p8 = add(lateral_[1].forward(c8), upsample_bilinear(p16, 2));
  Tensor p4 = add(lateral_[0].forward(c4), upsample_bilinear(p8, 2));

  FeaturePyramid pyr;
  pyr.levels = {smooth_[0].forward(p4), smooth_[1].forward(p8), smooth_[2].forward(p16)};
  pyr.strides = {4, 8, 16};
  return pyr;
}

std::pair<FeaturePyramid, FeaturePyramid> StereoBackbone::encode_pair(const Tensor& left, const Tensor& right,
                                                                      Mode mode) {
  if (left.shape() != right.shape()) {
    throw ShapeError("encode_pair: left " + shape_str(left.shape()) + " and right " + shape_str(right.shape()) +
                     " differ");
  }
  FeaturePyramid l = encode(left, mode);
  FeaturePyramid r = encode(right, mode);
  return {std::move(l), std::move(r)};
}

void StereoBackbone::collect(nn::Registry& r, const std::string& prefix) const {
  stem_.collect(r, prefix + ".stem");
  for (std::size_t i = 0; i < stage1_.size(); ++i) stage1_[i].collect(r, prefix + ".stage1." + std::to_string(i));
  for (std::size_t i = 0; i < stage2_.size(); ++i) stage2_[i].collect(r, prefix + ".stage2." + std::to_string(i));
  stage3_down_.collect(r, prefix + ".stage3.down");
  for (std::size_t i = 0; i < stage3_.size(); ++i) stage3_[i].collect(r, prefix + ".stage3." + std::to_string(i));
  for (std::size_t l = 0; l < 3; ++l) {
    lateral_[l].collect(r, prefix + ".fpn.lateral" + std::to_string(l));
    smooth_[l].collect(r, prefix + ".fpn.smooth" + std::to_string(l));
  }
}

}  // namespace evs
