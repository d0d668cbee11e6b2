#include <gtest/gtest.h>

#include "evs/backbone.hpp"
#include "evs/gradcheck.hpp"

using namespace evs;

namespace {

BackboneConfig tiny() {
  BackboneConfig c;
  c.in_channels = 3;
  c.widths = {6, 8, 10};
  c.feature_channels = 5;
  c.blocks_per_stage = 1;
  return c;
}

void zero_biases(const nn::Registry& r) {
  for (const NamedTensor& p : r.params)
    if (p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0) {
      Tensor t = p.tensor;
      std::fill(t.data().begin(), t.data().end(), 0.0);
    }
}

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST(Backbone, DefaultShapesAt64) {
  nn::Rng rng(1);
  StereoBackbone net(BackboneConfig{}, rng);
  FeaturePyramid p = net.encode(random_tensor({1, 8, 64, 64}, 2), Mode::Eval);
  ASSERT_EQ(p.levels.size(), 3u);
  EXPECT_EQ(p.levels[0].shape(), (Shape{1, 64, 16, 16}));
  EXPECT_EQ(p.levels[1].shape(), (Shape{1, 64, 8, 8}));
  EXPECT_EQ(p.levels[2].shape(), (Shape{1, 64, 4, 4}));
  EXPECT_EQ(p.strides, (std::vector<std::size_t>{4, 8, 16}));
}

TEST(Backbone, ZeroInputZeroBiasGivesZeroPyramid) {
  nn::Rng rng(3);
  StereoBackbone net(tiny(), rng);
  nn::Registry r;
  net.collect(r, "b");
  zero_biases(r);
  FeaturePyramid p = net.encode(Tensor::zeros({1, 3, 32, 32}), Mode::Eval);
  for (const Tensor& l : p.levels)
    for (double v : l.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, RejectsNonMultipleOf16) {
  nn::Rng rng(4);
  StereoBackbone net(tiny(), rng);
  try {
    net.encode(Tensor::zeros({1, 3, 40, 32}), Mode::Eval);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("multiples of 16"), std::string::npos);
  }
  EXPECT_THROW(net.encode(Tensor::zeros({1, 2, 32, 32}), Mode::Eval), ShapeError);
}

TEST(Backbone, CoarseReadoutReachesStem) {
  nn::Rng rng(5);
  StereoBackbone net(tiny(), rng);
  nn::Registry r;
  net.collect(r, "b");
  for (NamedTensor& p : r.params) p.tensor.set_requires_grad(true);
  FeaturePyramid p = net.encode(random_tensor({2, 3, 32, 32}, 6), Mode::Train);
  backward(random_projection(p.levels[2], 7));
  bool reached = false;
  for (const NamedTensor& t : r.params)
    if (t.name == "b.stem.conv.weight" && t.tensor.has_grad())
      for (double g : t.tensor.grad()) reached |= g != 0.0;
  EXPECT_TRUE(reached);
}

TEST(Backbone, PairSharesWeights) {
  nn::Rng rng(8);
  StereoBackbone net(tiny(), rng);
  Tensor a = random_tensor({1, 3, 32, 48}, 9), b = random_tensor({1, 3, 32, 48}, 10);

  auto [l, r] = net.encode_pair(a, a, Mode::Eval);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(same(l.levels[i], r.levels[i]));

  auto [ab_l, ab_r] = net.encode_pair(a, b, Mode::Eval);
  auto [ba_l, ba_r] = net.encode_pair(b, a, Mode::Eval);
  FeaturePyramid solo = net.encode(b, Mode::Eval);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(same(ab_l.levels[i], ba_r.levels[i]));
    EXPECT_TRUE(same(ab_r.levels[i], ba_l.levels[i]));
    EXPECT_TRUE(same(ab_r.levels[i], solo.levels[i]));
  }
  EXPECT_THROW(net.encode_pair(a, Tensor::zeros({1, 3, 32, 32}), Mode::Eval), ShapeError);
}

TEST(Backbone, NoPerViewParameters) {
  nn::Rng rng(11);
  StereoBackbone net(tiny(), rng);
  nn::Registry r;
  net.collect(r, "b");
  const std::size_t before = r.param_count();
  for (const NamedTensor& p : r.params) {
    EXPECT_EQ(p.name.find("left"), std::string::npos);
    EXPECT_EQ(p.name.find("right"), std::string::npos);
  }
  net.encode(random_tensor({1, 3, 16, 16}, 1), Mode::Eval);
  net.encode(random_tensor({1, 3, 64, 48}, 1), Mode::Eval);
  nn::Registry again;
  net.collect(again, "b");
  EXPECT_EQ(again.param_count(), before);
}

TEST(Backbone, PerturbationStaysWithinReceptiveField) {
  nn::Rng rng(12);
  StereoBackbone net(tiny(), rng);
  Tensor x = random_tensor({1, 3, 16, 512}, 13);
  Tensor y = x.clone();
  y.data()[0] += 1.0;  // row 0, column 0 of channel 0
  FeaturePyramid a = net.encode(x, Mode::Eval), b = net.encode(y, Mode::Eval);
  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor& pa = a.levels[l];
    const Tensor& pb = b.levels[l];
    const std::size_t C = pa.dim(1), H = pa.dim(2), W = pa.dim(3);
    double near = 0.0, far = 0.0;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          const std::size_t i = (c * H + h) * W + w;
          const double d = std::abs(pa.data()[i] - pb.data()[i]);
          if (w == 0) near = std::max(near, d);
          if (w * a.strides[l] >= 448) far = std::max(far, d);
        }
    EXPECT_GT(near, 0.0) << "level " << l;
    EXPECT_EQ(far, 0.0) << "level " << l;
  }
}

TEST(Backbone, ResidualBlockGradcheck) {
  nn::Rng rng(14);
  ResidualBlock block(3, 4, 2, rng);
  auto res = gradcheck(
      [&](const std::vector<Tensor>& in) { return random_projection(block.forward(in[0], Mode::Eval), 16); },
      {random_tensor({2, 3, 6, 6}, 15)});
  EXPECT_LT(res.max_rel_error, 1e-4);
}
