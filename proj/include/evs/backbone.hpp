#pragma once

#include <array>
#include <utility>
#include <vector>

#include "evs/nn.hpp"

namespace evs {

struct FeaturePyramid {
  std::vector<Tensor> levels;        // fine -> coarse, each [B,Cf,H/s,W/s]
  std::vector<std::size_t> strides;  // 4, 8, 16
};

struct BackboneConfig {
  std::size_t in_channels = 8;
  std::array<std::size_t, 3> widths{32, 48, 64};
  std::size_t blocks_per_stage = 2;
  std::size_t feature_channels = 64;
};

/// conv-BN-ReLU, conv-BN, plus skip (projected when the shape changes), ReLU.
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, nn::Rng& rng);

  Tensor forward(const Tensor& x, Mode mode);
  void collect(nn::Registry& r, const std::string& prefix) const;

 private:
  nn::ConvBnRelu first_;
  nn::Conv2d second_;
  nn::BatchNorm2d second_bn_;
  bool project_ = false;
  nn::Conv2d skip_;
  nn::BatchNorm2d skip_bn_;
};

/// Same wiring as ResidualBlock with both 3x3 convs deformable.
class DeformResidualBlock {
 public:
  DeformResidualBlock() = default;
  DeformResidualBlock(std::size_t channels, nn::Rng& rng);

  Tensor forward(const Tensor& x, Mode mode);
  void collect(nn::Registry& r, const std::string& prefix) const;

 private:
  nn::DeformConv2d first_, second_;
  nn::BatchNorm2d first_bn_, second_bn_;
};

/// Shared multi-scale encoder: stride-2 stem, residual stages at strides
/// 4/8/16 (the last one deformable), and an FPN producing three maps of
/// feature_channels channels.
class StereoBackbone {
 public:
  static constexpr std::size_t kInputMultiple = 16;

  StereoBackbone() = default;
  StereoBackbone(const BackboneConfig& cfg, nn::Rng& rng);

  FeaturePyramid encode(const Tensor& view, Mode mode);
  std::pair<FeaturePyramid, FeaturePyramid> encode_pair(const Tensor& left, const Tensor& right, Mode mode);

  void collect(nn::Registry& r, const std::string& prefix) const;
  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  nn::ConvBnRelu stem_;
  std::vector<ResidualBlock> stage1_, stage2_;
  nn::ConvBnRelu stage3_down_;
  std::vector<DeformResidualBlock> stage3_;
  std::array<nn::Conv2d, 3> lateral_;
  std::array<nn::Conv2d, 3> smooth_;
};

}  // namespace evs
