#include <gtest/gtest.h>

#include <filesystem>

#include "evs/checkpoint.hpp"
#include "evs/cost_volume.hpp"
#include "evs/gradcheck.hpp"

using namespace evs;

namespace {

// Four nested loops over (b, d, h, w) with an inner channel sum.
Tensor correlate_oracle(const Tensor& l, const Tensor& r, std::size_t D) {
  const std::size_t B = l.dim(0), C = l.dim(1), H = l.dim(2), W = l.dim(3);
  Tensor out = Tensor::zeros({B, D, H, W});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          if (w < d) continue;
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            acc += l.data()[((b * C + c) * H + h) * W + w] * r.data()[((b * C + c) * H + h) * W + w - d];
          out.data()[((b * D + d) * H + h) * W + w] = acc / static_cast<double>(C);
        }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

FeaturePyramid pyramid(std::size_t C, std::size_t H, std::size_t W, std::uint64_t seed) {
  FeaturePyramid p;
  p.strides = {4, 8, 16};
  for (std::size_t i = 0; i < 3; ++i) p.levels.push_back(random_tensor({1, C, H >> i, W >> i}, seed + i));
  return p;
}

}  // namespace

TEST(Correlate, OnesGiveOneWhereValid) {
  Tensor ones = Tensor::full({1, 4, 3, 5}, 1.0);
  Correlation c = correlate(ones, ones, 3);
  ASSERT_EQ(c.volume.shape(), (Shape{1, 3, 3, 5}));
  ASSERT_EQ(c.valid.shape(), (Shape{3, 5}));
  for (std::size_t d = 0; d < 3; ++d)
    for (std::size_t h = 0; h < 3; ++h)
      for (std::size_t w = 0; w < 5; ++w) {
        const bool valid = w >= d;
        EXPECT_EQ(c.valid.data()[d * 5 + w], valid ? 1.0 : 0.0);
        EXPECT_EQ(c.volume.data()[(d * 3 + h) * 5 + w], valid ? 1.0 : 0.0);
      }
}

TEST(Correlate, ZeroDisparityIsMeanSquare) {
  Tensor f = random_tensor({1, 6, 4, 4}, 1);
  Tensor c = correlate(f, f, 2).volume;
  for (std::size_t h = 0; h < 4; ++h)
    for (std::size_t w = 0; w < 4; ++w) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < 6; ++ch) acc += std::pow(f.data()[(ch * 4 + h) * 4 + w], 2);
      EXPECT_NEAR(c.data()[h * 4 + w], acc / 6.0, 1e-14);
      EXPECT_GE(c.data()[h * 4 + w], 0.0);
    }
}

TEST(Correlate, MatchesNestedLoopOracle) {
  Tensor l = random_tensor({2, 5, 4, 9}, 2), r = random_tensor({2, 5, 4, 9}, 3);
  EXPECT_LT(max_abs_diff(correlate(l, r, 5).volume, correlate_oracle(l, r, 5)), 1e-10);
}

TEST(Correlate, BilinearInLeft) {
  Tensor l = random_tensor({1, 3, 3, 6}, 4), r = random_tensor({1, 3, 3, 6}, 5);
  Tensor a = correlate(scale(l, 2.5), r, 4).volume, b = correlate(l, r, 4).volume;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], 2.5 * b.data()[i], 1e-14);
}

TEST(Correlate, Gradcheck) {
  auto res = gradcheck(
      [](const std::vector<Tensor>& in) { return random_projection(correlate(in[0], in[1], 4).volume, 6); },
      {random_tensor({2, 3, 3, 7}, 7), random_tensor({2, 3, 3, 7}, 8)});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Correlate, RejectsMismatch) {
  EXPECT_THROW(correlate(Tensor::zeros({1, 2, 3, 4}), Tensor::zeros({1, 2, 3, 5}), 2), ShapeError);
  EXPECT_THROW(correlate(Tensor::zeros({1, 2, 3, 4}), Tensor::zeros({1, 2, 3, 4}), 0), ShapeError);
}

TEST(CostPyramid, CandidateCounts) {
  EXPECT_EQ(candidates_at_stride(192, 4), 48u);
  EXPECT_EQ(candidates_at_stride(192, 8), 24u);
  EXPECT_EQ(candidates_at_stride(192, 16), 12u);
  EXPECT_EQ(candidates_at_stride(16, 4), 4u);
  EXPECT_EQ(candidates_at_stride(33, 16), 3u);
}

TEST(CostPyramid, IdenticalPyramidsGiveSquaredMeanAtZero) {
  FeaturePyramid p = pyramid(4, 16, 32, 9);
  CostVolumePyramid c = build_cost_pyramid(p, p, 32);
  ASSERT_EQ(c.volumes.size(), 3u);
  EXPECT_EQ(c.candidates, (std::vector<std::size_t>{8, 4, 2}));
  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor& f = p.levels[l];
    const std::size_t HW = f.dim(2) * f.dim(3);
    EXPECT_EQ(c.volumes[l].shape(), (Shape{1, c.candidates[l], f.dim(2), f.dim(3)}));
    for (std::size_t i = 0; i < HW; ++i) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < 4; ++ch) acc += std::pow(f.data()[ch * HW + i], 2);
      EXPECT_NEAR(c.volumes[l].data()[i], acc / 4.0, 1e-14);
    }
  }
}

TEST(CostPyramid, RejectsLevelMismatch) {
  FeaturePyramid a = pyramid(4, 16, 16, 1), b = pyramid(4, 16, 16, 2);
  b.levels.pop_back();
  b.strides.pop_back();
  EXPECT_THROW(build_cost_pyramid(a, b, 16), ShapeError);
}

TEST(CostPyramid, DumpRoundTrip) {
  FeaturePyramid p = pyramid(3, 16, 16, 3);
  CostVolumePyramid c = build_cost_pyramid(p, p, 16);
  const auto path = std::filesystem::temp_directory_path() / "evs_cost_dump.evsk";
  dump_cost_pyramid(path, c);
  const auto back = load_checkpoint(path);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].name, "cost.s4");
  EXPECT_EQ(back[2].name, "cost.s16");
  EXPECT_EQ(back[1].tensor.shape(), c.volumes[1].shape());
  EXPECT_EQ(back[1].tensor.data()[5], static_cast<double>(static_cast<float>(c.volumes[1].data()[5])));
  std::filesystem::remove(path);
}
