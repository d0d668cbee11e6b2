#include <gtest/gtest.h>

#include "evs/aggregation.hpp"
#include "evs/gradcheck.hpp"

using namespace evs;

namespace {

CostVolumePyramid toy_pyramid(std::size_t H, std::size_t W, std::uint64_t seed) {
  CostVolumePyramid p;
  p.candidates = {6, 3, 2};
  p.strides = {4, 8, 16};
  p.max_disparity = 24;
  for (std::size_t l = 0; l < 3; ++l) {
    p.volumes.push_back(random_tensor({1, p.candidates[l], H >> l, W >> l}, seed + l));
    p.valid.push_back(Tensor::full({p.candidates[l], W >> l}, 1.0));
  }
  return p;
}

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST(Isa, ZeroInitIsIdentity) {
  nn::Rng rng(1);
  IntraScaleBlock block(5, 8, 2, rng, true);
  Tensor v = random_tensor({2, 5, 6, 7}, 2);
  EXPECT_TRUE(same(block.forward(v), v));
}

TEST(Isa, ConstantVolumeStaysConstantPerChannelInInterior) {
  nn::Rng rng(3);
  IntraScaleBlock block(4, 6, 1, rng, false);
  Tensor v = Tensor::zeros({1, 4, 9, 9});
  for (std::size_t d = 0; d < 4; ++d)
    for (std::size_t i = 0; i < 81; ++i) v.data()[d * 81 + i] = 0.3 * static_cast<double>(d) - 0.4;
  Tensor y = block.forward(v);
  // Two stacked 3x3 convs see the zero border within 2 pixels of the edge.
  for (std::size_t d = 0; d < 4; ++d) {
    const double ref = y.data()[d * 81 + 4 * 9 + 4];
    for (std::size_t h = 2; h < 7; ++h)
      for (std::size_t w = 2; w < 7; ++w) EXPECT_NEAR(y.data()[d * 81 + h * 9 + w], ref, 1e-12);
  }
}

TEST(Isa, Gradcheck) {
  nn::Rng rng(4);
  IntraScaleBlock block(3, 4, 2, rng, false);
  auto res = gradcheck([&](const std::vector<Tensor>& in) { return random_projection(block.forward(in[0]), 5); },
                       {random_tensor({1, 3, 5, 6}, 6)});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Csa, SingleLevelIsIdentity) {
  nn::Rng rng(5);
  CrossScaleBlock block({4}, rng, false);
  Tensor v = random_tensor({1, 4, 8, 8}, 7);
  auto out = block.forward({v});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(same(out[0], v));
}

TEST(Csa, ZeroInitLeavesLevelsUnchanged) {
  nn::Rng rng(6);
  CrossScaleBlock block({6, 3, 2}, rng, true);
  CostVolumePyramid p = toy_pyramid(16, 16, 8);
  auto out = block.forward(p.volumes);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_TRUE(same(out[l], p.volumes[l]));
}

TEST(Csa, CoarsePerturbationReachesFinerLevels) {
  nn::Rng rng(7);
  CrossScaleBlock block({6, 3, 2}, rng, false);
  CostVolumePyramid p = toy_pyramid(16, 16, 9);
  auto base = block.forward(p.volumes);
  std::vector<Tensor> moved = p.volumes;
  moved[2] = p.volumes[2].clone();
  moved[2].data()[0] += 0.5;
  auto out = block.forward(moved);
  EXPECT_FALSE(same(out[0], base[0]));
  EXPECT_FALSE(same(out[1], base[1]));
}

TEST(Csa, RejectsLevelMismatch) {
  nn::Rng rng(8);
  CrossScaleBlock block({6, 3, 2}, rng, false);
  CostVolumePyramid p = toy_pyramid(16, 16, 10);
  EXPECT_THROW(block.forward({p.volumes[0], p.volumes[1]}), ShapeError);
  EXPECT_THROW(block.forward({p.volumes[0], p.volumes[2], p.volumes[1]}), ShapeError);
}

TEST(Aggregate, SingleStageZeroInitIsIdentity) {
  nn::Rng rng(9);
  Aggregator agg({6, 3, 2}, {1, 8, true}, rng);
  CostVolumePyramid p = toy_pyramid(16, 16, 11);
  AggregatedPyramid out = agg.aggregate(p, Mode::Train);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_TRUE(same(out.volumes[l], p.volumes[l]));
}

TEST(Aggregate, TwoStageZeroInitIsIdentity) {
  nn::Rng rng(10);
  Aggregator agg({6, 3, 2}, {2, 8, true}, rng);
  CostVolumePyramid p = toy_pyramid(16, 32, 12);
  AggregatedPyramid out = agg.aggregate(p, Mode::Eval);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_TRUE(same(out.volumes[l], p.volumes[l]));
}

TEST(Aggregate, RetainsOnePyramidPerStageInTrainMode) {
  nn::Rng rng(11);
  Aggregator agg({6, 3, 2}, {3, 4, false}, rng);
  CostVolumePyramid p = toy_pyramid(16, 16, 13);
  AggregatedPyramid train = agg.aggregate(p, Mode::Train);
  ASSERT_EQ(train.stages.size(), 3u);
  for (const auto& stage : train.stages)
    for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(stage[l].shape(), p.volumes[l].shape());
  EXPECT_TRUE(agg.aggregate(p, Mode::Eval).stages.empty());
  EXPECT_EQ(agg.isa(0, 0).deform_layers(), 1u);
  EXPECT_EQ(agg.isa(1, 0).deform_layers(), 2u);
  EXPECT_EQ(agg.isa(2, 2).deform_layers(), 2u);
}

TEST(Aggregate, Deterministic) {
  CostVolumePyramid p = toy_pyramid(16, 16, 14);
  nn::Rng r1(12), r2(12);
  Aggregator a({6, 3, 2}, {2, 4, false}, r1), b({6, 3, 2}, {2, 4, false}, r2);
  auto x = a.aggregate(p, Mode::Eval), y = b.aggregate(p, Mode::Eval);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_TRUE(same(x.volumes[l], y.volumes[l]));
}

TEST(Aggregate, TwoStageGradcheckOnToyVolume) {
  nn::Rng rng(13);
  Aggregator agg({6}, {2, 4, false}, rng);
  auto res = gradcheck(
      [&](const std::vector<Tensor>& in) {
        CostVolumePyramid p;
        p.volumes = {in[0]};
        p.candidates = {6};
        p.strides = {4};
        return random_projection(agg.aggregate(p, Mode::Eval).volumes[0], 14);
      },
      {random_tensor({1, 6, 8, 8}, 15)});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Aggregate, MultiLevelGradcheck) {
  nn::Rng rng(16);
  Aggregator agg({6, 3, 2}, {2, 4, false}, rng);
  CostVolumePyramid p = toy_pyramid(16, 16, 17);
  GradcheckOptions opt;
  opt.max_entries = 60;
  auto res = gradcheck(
      [&](const std::vector<Tensor>& in) {
        CostVolumePyramid q = p;
        q.volumes = in;
        auto out = agg.aggregate(q, Mode::Eval).volumes;
        return add(add(random_projection(out[0], 1), random_projection(out[1], 2)), random_projection(out[2], 3));
      },
      p.volumes, opt);
  EXPECT_LT(res.max_rel_error, 1e-4);
}
