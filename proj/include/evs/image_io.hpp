#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "evs/tensor.hpp"

namespace evs {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image16 {
  std::size_t width = 0, height = 0;
  std::vector<std::uint16_t> pixels;
};

void write_png16(const std::filesystem::path& path, const Image16& image);
Image16 read_png16(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, std::size_t width, std::size_t height,
                   const std::vector<std::uint8_t>& rgb);

/// round(d * 256) clipped to [1, 65535] on valid pixels, 0 elsewhere.
/// disparity and valid are [1,1,H,W] (valid may be undefined: all valid).
Image16 encode_disparity(const Tensor& disparity, const Tensor& valid);

/// Magma colour map, t clamped to [0, 1].
std::array<std::uint8_t, 3> magma(double t);

/// Colour-mapped disparity scaled by max_value; invalid pixels are black.
std::vector<std::uint8_t> colorize(const Tensor& disparity, const Tensor& valid, double max_value);

/// Flat little-endian float32 dump in row-major order.
void write_float32(const std::filesystem::path& path, const Tensor& t);

}  // namespace evs
