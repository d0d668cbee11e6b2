#pragma once

#include <cstdint>
#include <vector>

#include "evs/aggregation.hpp"
#include "evs/backbone.hpp"
#include "evs/disparity.hpp"
#include "evs/events.hpp"
#include "evs/loss.hpp"

namespace evs {

struct ModelConfig {
  std::size_t scales = 3;        // M
  std::size_t rep_channels = 8;  // C0
  BackboneConfig backbone;
  std::size_t max_disparity = 32;
  AggregationConfig aggregation;
  std::size_t refine_width = 16;
};

struct Head {
  Tensor disparity;  // full resolution, pixels
  std::size_t stage = 0;
  std::size_t stride = 0;
};

struct ModelOutput {
  DisparityOutput refined;
  Tensor initial;           // full-resolution disparity fed to the refiner
  std::vector<Head> heads;  // every stage x level, train mode only
};

/// Concentrator -> shared backbone -> correlation pyramid -> ISA/CSA
/// aggregation -> soft-argmax -> refinement at full resolution.
class URNet {
 public:
  URNet(const ModelConfig& cfg, std::uint64_t seed);

  /// stacks: [B,M,H,W] per view, H and W divisible by 16.
  ModelOutput forward(const Tensor& left_stacks, const Tensor& right_stacks, Mode mode);

  /// Learnable parameters and BN buffers under stable names.
  nn::Registry registry() const;
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  Concentrator concentrator_;
  StereoBackbone backbone_;
  Aggregator aggregator_;
  Refiner refiner_;
};

/// Scale weights for the heads of one forward pass: coarse levels (stride 8
/// and 16) get `coarse`, stride-4 heads get `mid`, the refined output `final`.
struct HeadWeights {
  double coarse = 0.25;
  double mid = 0.5;
  double final = 1.0;
};

/// Supervised outputs and their weights, final output last.
std::pair<std::vector<SupervisedOutput>, std::vector<double>> supervision(const ModelOutput& out,
                                                                          const HeadWeights& w,
                                                                          bool uncertainty);

}  // namespace evs
