#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evs/events.hpp"
#include "evs/loss.hpp"

namespace evs {

struct Plane {
  std::size_t x0 = 0, y0 = 0, width = 0, height = 0;  // left-view rectangle
  int disparity = 0;
  int vx = 0, vy = 0;  // texture motion in pixels per frame
};

struct SceneParams {
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t max_disparity = 32;
  int min_plane_disparity = 2;
  int max_plane_disparity = 24;
  std::size_t foreground_planes = 3;
  std::size_t frames = 12;
  std::uint64_t frame_interval_us = 1000;
  double dot_density = 0.06;  // dots per texture pixel
  double contrast_threshold = 0.15;
};

struct SyntheticScene {
  EventFile left, right;
  std::vector<double> disparity;  // H*W, left view, pixels
  std::vector<double> valid;      // H*W, 1 where x - d >= 0
  std::vector<Plane> planes;      // painter's order, far to near
};

/// Draws a background plane plus random foreground rectangles and renders
/// them. Deterministic for a given seed.
SyntheticScene generate_scene(const SceneParams& params, std::uint64_t seed);

/// Renders explicit planes (painter's order: later planes occlude earlier ones,
/// and must be nearer). Plane disparities must lie in [0, D-1].
SyntheticScene render_scene(const SceneParams& params, const std::vector<Plane>& planes, std::uint64_t seed);

/// Ground truth as [1,1,H,W] tensors.
GroundTruth ground_truth(const SyntheticScene& scene);

/// Writes left.evt, right.evt and gt.evsk (tensors "disparity", "valid") into dir.
void save_scene(const std::filesystem::path& dir, const SyntheticScene& scene);
SyntheticScene load_scene(const std::filesystem::path& dir);

/// Writes scenes as dir/train/scene_XXXX and dir/test/scene_XXXX.
void generate_dataset(const std::filesystem::path& dir, const SceneParams& params, std::size_t train_count,
                      std::size_t test_count, std::uint64_t seed);

}  // namespace evs
