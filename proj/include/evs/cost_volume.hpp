#pragma once

#include <filesystem>
#include <vector>

#include "evs/backbone.hpp"

namespace evs {

struct Correlation {
  Tensor volume;  // [B,D,H,W]
  Tensor valid;   // [D,W]; 1 where w - d >= 0
};

/// cost(b,d,h,w) = mean_c F_L(b,c,h,w) * F_R(b,c,h,w-d); candidates whose
/// right-view column falls off the image cost 0 and are flagged invalid.
Correlation correlate(const Tensor& left, const Tensor& right, std::size_t candidates);

/// ceil(max_disparity / stride)
std::size_t candidates_at_stride(std::size_t max_disparity, std::size_t stride);

struct CostVolumePyramid {
  std::vector<Tensor> volumes;          // fine -> coarse
  std::vector<Tensor> valid;
  std::vector<std::size_t> candidates;  // D_s per level
  std::vector<std::size_t> strides;
  std::size_t max_disparity = 0;
};

CostVolumePyramid build_cost_pyramid(const FeaturePyramid& left, const FeaturePyramid& right,
                                     std::size_t max_disparity);

/// Writes each level as a named tensor ("cost.s4", ...) in the checkpoint format.
void dump_cost_pyramid(const std::filesystem::path& path, const CostVolumePyramid& pyramid);

}  // namespace evs
