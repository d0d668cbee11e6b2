#include "evs/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "evs/binary_io.hpp"

namespace evs {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw ImageError("cannot open " + path.string());
  return f;
}

void png_warn(png_structp, png_const_charp) {}

void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height, int bit_depth,
               int color_type, const std::vector<png_bytep>& rows) {
  File f = open(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  if (!png) throw ImageError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("libpng failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png16(const std::filesystem::path& path, const Image16& image) {
  if (image.pixels.size() != image.width * image.height) throw ImageError("write_png16: pixel count mismatch");
  std::vector<std::uint16_t> buf = image.pixels;
  std::vector<png_bytep> rows(image.height);
  for (std::size_t y = 0; y < image.height; ++y) rows[y] = reinterpret_cast<png_bytep>(buf.data() + y * image.width);
  write_png(path, image.width, image.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

Image16 read_png16(const std::filesystem::path& path) {
  File f = open(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  if (!png) throw ImageError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  Image16 img;
  std::vector<png_bytep> rows;
  volatile bool wrong_format = false;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("libpng failed reading " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  if (png_get_bit_depth(png, info) == 16 && png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY) {
    png_set_swap(png);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.pixels.resize(img.width * img.height);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y)
      rows[y] = reinterpret_cast<png_bytep>(img.pixels.data() + y * img.width);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  } else {
    wrong_format = true;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (wrong_format) throw ImageError(path.string() + " is not a 16-bit grayscale PNG");
  return img;
}

void write_png_rgb(const std::filesystem::path& path, std::size_t width, std::size_t height,
                   const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != 3 * width * height) throw ImageError("write_png_rgb: pixel count mismatch");
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(rgb.data() + 3 * y * width);
  write_png(path, width, height, 8, PNG_COLOR_TYPE_RGB, rows);
}

namespace {

void check_map(const Tensor& disparity, const Tensor& valid) {
  if (disparity.rank() != 4 || disparity.dim(0) != 1 || disparity.dim(1) != 1) {
    throw ShapeError("expected a [1,1,H,W] disparity map, got " + shape_str(disparity.shape()));
  }
  if (valid.defined() && valid.shape() != disparity.shape()) throw ShapeError("mask does not match the disparity map");
}

}  // namespace

Image16 encode_disparity(const Tensor& disparity, const Tensor& valid) {
  check_map(disparity, valid);
  Image16 img{disparity.dim(3), disparity.dim(2), {}};
  img.pixels.resize(disparity.numel(), 0);
  auto d = disparity.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (valid.defined() && valid.data()[i] <= 0.5) continue;
    const double v = std::clamp(std::round(d[i] * 256.0), 1.0, 65535.0);
    img.pixels[i] = static_cast<std::uint16_t>(v);
  }
  return img;
}

std::array<std::uint8_t, 3> magma(double t) {
  static constexpr std::uint8_t kAnchors[17][3] = {
      {0, 0, 4},       {10, 8, 34},     {29, 17, 71},    {54, 16, 107},   {81, 18, 124},   {106, 28, 129},
      {131, 38, 129},  {156, 46, 127},  {183, 55, 121},  {208, 65, 111},  {231, 82, 99},   {245, 107, 92},
      {252, 137, 97},  {254, 167, 114}, {254, 196, 136}, {253, 226, 163}, {252, 253, 191}};
  if (!(t >= 0)) t = 0;
  t = std::min(t, 1.0) * 16.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), 15);
  const double f = t - static_cast<double>(i);
  std::array<std::uint8_t, 3> c{};
  for (int k = 0; k < 3; ++k) {
    c[k] = static_cast<std::uint8_t>(std::lround((1 - f) * kAnchors[i][k] + f * kAnchors[i + 1][k]));
  }
  return c;
}

std::vector<std::uint8_t> colorize(const Tensor& disparity, const Tensor& valid, double max_value) {
  check_map(disparity, valid);
  if (max_value <= 0) throw std::invalid_argument("colorize: max_value must be positive");
  auto d = disparity.data();
  std::vector<std::uint8_t> rgb(3 * d.size(), 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (valid.defined() && valid.data()[i] <= 0.5) continue;
    const auto c = magma(d[i] / max_value);
    std::copy(c.begin(), c.end(), rgb.begin() + 3 * i);
  }
  return rgb;
}

void write_float32(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ImageError("cannot open " + path.string() + " for writing");
  for (double v : t.data()) io::put_le<float>(os, static_cast<float>(v));
  if (!os) throw ImageError("write failed: " + path.string());
}

}  // namespace evs
