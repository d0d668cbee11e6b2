#pragma once

#include <vector>

#include "evs/cost_volume.hpp"
#include "evs/nn.hpp"

namespace evs {

struct AggregationConfig {
  std::size_t stages = 2;
  std::size_t hidden = 16;
  /// Zero-initialise every residual output and cross-scale alignment conv so
  /// the module starts as the identity.
  bool zero_init = true;
};

/// Intra-scale aggregation on one level: the disparity axis is treated as
/// channels and refined by a residual stack of deformable 3x3 convolutions.
class IntraScaleBlock {
 public:
  IntraScaleBlock() = default;
  IntraScaleBlock(std::size_t candidates, std::size_t hidden, std::size_t deform_layers, nn::Rng& rng,
                  bool zero_init);

  Tensor forward(const Tensor& volume) const;
  void collect(nn::Registry& r, const std::string& prefix) const;
  std::size_t deform_layers() const { return layers_.size(); }

 private:
  std::vector<nn::DeformConv2d> layers_;
  nn::Conv2d out_;
};

/// Cross-scale aggregation: every level receives the other levels resampled
/// to its resolution (bilinear up, strided 3x3 convs down) and aligned to its
/// candidate count, fused additively.
class CrossScaleBlock {
 public:
  CrossScaleBlock() = default;
  CrossScaleBlock(const std::vector<std::size_t>& candidates, nn::Rng& rng, bool zero_init);

  /// Outputs are computed from the unmodified inputs.
  std::vector<Tensor> forward(const std::vector<Tensor>& volumes) const;
  void collect(nn::Registry& r, const std::string& prefix) const;

 private:
  struct Path {
    std::size_t src = 0, dst = 0;
    std::vector<nn::Conv2d> convs;  // coarse->fine: one 1x1; fine->coarse: one stride-2 3x3 per level
  };
  std::vector<std::size_t> candidates_;
  std::vector<Path> paths_;
};

struct AggregatedPyramid {
  std::vector<Tensor> volumes;              // final stage, fine -> coarse
  std::vector<std::vector<Tensor>> stages;  // per-stage outputs, kept in train mode
};

/// Alternating ISA/CSA stages; stages after the first carry one extra
/// deformable convolution in every ISA block.
class Aggregator {
 public:
  Aggregator() = default;
  Aggregator(const std::vector<std::size_t>& candidates, const AggregationConfig& cfg, nn::Rng& rng);

  AggregatedPyramid aggregate(const CostVolumePyramid& pyramid, Mode mode) const;
  void collect(nn::Registry& r, const std::string& prefix) const;
  std::size_t stages() const { return isa_.size(); }
  const IntraScaleBlock& isa(std::size_t stage, std::size_t level) const { return isa_[stage][level]; }

 private:
  std::vector<std::size_t> candidates_;
  std::vector<std::vector<IntraScaleBlock>> isa_;
  std::vector<CrossScaleBlock> csa_;
};

}  // namespace evs
