#include <gtest/gtest.h>

#include "evs/disparity.hpp"
#include "evs/gradcheck.hpp"

using namespace evs;

namespace {

// Direct O(N^2) attention over the H*W tokens of each batch element.
Tensor quadratic_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t B = q.dim(0), C = q.dim(1), N = q.dim(2) * q.dim(3);
  Tensor out = Tensor::zeros(q.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < N; ++i) {
      double den = 0.0;
      std::vector<double> num(C, 0.0);
      for (std::size_t j = 0; j < N; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += q.data()[(b * C + c) * N + i] * k.data()[(b * C + c) * N + j];
        den += s;
        for (std::size_t c = 0; c < C; ++c) num[c] += s * v.data()[(b * C + c) * N + j];
      }
      for (std::size_t c = 0; c < C; ++c) out.data()[(b * C + c) * N + i] = num[c] / den;
    }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

Tensor positive(const Shape& s, std::uint64_t seed) { return random_tensor(s, seed, 0.1, 1.5); }

}  // namespace

TEST(CostToProb, EqualCostsAreUniform) {
  DisparityDistribution p = cost_to_prob(Tensor::full({1, 4, 2, 3}, 0.7));
  EXPECT_EQ(p.candidates, 4u);
  for (double v : p.probs.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(CostToProb, LargeCostSaturates) {
  Tensor c = Tensor::zeros({1, 4, 1, 1});
  c.data()[2] = 1000.0;
  DisparityDistribution p = cost_to_prob(c);
  EXPECT_NEAR(p.probs.data()[2], 1.0, 1e-12);
  EXPECT_EQ(p.probs.data()[0], 0.0);
}

TEST(CostToProb, MatchesDirectNormalisation) {
  Tensor c = random_tensor({2, 5, 3, 4}, 1, -3, 3);
  DisparityDistribution p = cost_to_prob(c);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 12; ++i) {
      double z = 0.0;
      for (std::size_t d = 0; d < 5; ++d) z += std::exp(c.data()[(b * 5 + d) * 12 + i]);
      double total = 0.0;
      for (std::size_t d = 0; d < 5; ++d) {
        const std::size_t idx = (b * 5 + d) * 12 + i;
        EXPECT_NEAR(p.probs.data()[idx], std::exp(c.data()[idx]) / z, 1e-10);
        EXPECT_GE(p.probs.data()[idx], 0.0);
        total += p.probs.data()[idx];
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
}

TEST(CostToProb, ShiftInvariantPerPixel) {
  Tensor c = random_tensor({1, 4, 2, 2}, 2);
  Tensor shifted = c.clone();
  for (std::size_t d = 0; d < 4; ++d)
    for (std::size_t i = 0; i < 4; ++i) shifted.data()[d * 4 + i] += 10.0 * static_cast<double>(i);
  EXPECT_LT(max_abs_diff(cost_to_prob(c).probs, cost_to_prob(shifted).probs), 1e-14);
}

TEST(SoftArgmax, UniformOverFive) {
  Tensor d = soft_argmax(cost_to_prob(Tensor::zeros({1, 5, 2, 2})));
  for (double v : d.data()) EXPECT_NEAR(v, 2.0, 1e-14);
}

TEST(SoftArgmax, DeltaAndHalfHalf) {
  Tensor delta = Tensor::zeros({1, 5, 1, 1});
  delta.data()[3] = 1.0;
  EXPECT_EQ(soft_argmax({delta, 5}).item(), 3.0);
  Tensor half = Tensor::from({1, 4, 1, 1}, {0.5, 0, 0, 0.5});
  EXPECT_EQ(soft_argmax({half, 4}).item(), 1.5);
}

TEST(SoftArgmax, StaysInCandidateRange) {
  Tensor d = soft_argmax(cost_to_prob(random_tensor({2, 7, 5, 5}, 3, -20, 20)));
  for (double v : d.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 6.0);
  }
}

TEST(SoftArgmax, GradcheckThroughSoftmax) {
  auto res = gradcheck(
      [](const std::vector<Tensor>& in) { return random_projection(soft_argmax(cost_to_prob(in[0])), 4); },
      {random_tensor({2, 5, 3, 4}, 5)});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(UpsampleDisparity, ScalesValuesByFactor) {
  Tensor d = Tensor::full({1, 1, 3, 3}, 2.5);
  Tensor u = upsample_disparity(d, 4);
  EXPECT_EQ(u.shape(), (Shape{1, 1, 12, 12}));
  for (double v : u.data()) EXPECT_DOUBLE_EQ(v, 10.0);
}

TEST(LinearAttention, MatchesQuadraticForm) {
  Tensor q = positive({1, 4, 3, 3}, 6), k = positive({1, 4, 3, 3}, 7), v = random_tensor({1, 4, 3, 3}, 8);
  EXPECT_LT(max_abs_diff(linear_attention_core(q, k, v), quadratic_attention(q, k, v)), 1e-8);
  Tensor q2 = positive({2, 3, 4, 5}, 9), k2 = positive({2, 3, 4, 5}, 10), v2 = random_tensor({2, 3, 4, 5}, 11);
  EXPECT_LT(max_abs_diff(linear_attention_core(q2, k2, v2), quadratic_attention(q2, k2, v2)), 1e-8);
}

TEST(LinearAttention, BlockMatchesQuadraticOracleOnRandomInput) {
  nn::Rng rng(12);
  LinearAttention lab(4, rng);
  Tensor x = random_tensor({1, 4, 3, 3}, 13);
  Tensor q = elu_plus_one(lab.query.forward(x)), k = elu_plus_one(lab.key.forward(x));
  Tensor expected = add(x, quadratic_attention(q, k, lab.value.forward(x)));
  EXPECT_LT(max_abs_diff(lab.forward(x), expected), 1e-8);
}

TEST(LinearAttention, SingleTokenReturnsValuePlusInput) {
  nn::Rng rng(14);
  LinearAttention lab(3, rng);
  Tensor x = random_tensor({1, 3, 1, 1}, 15);
  Tensor expected = add(x, lab.value.forward(x));
  EXPECT_LT(max_abs_diff(lab.forward(x), expected), 1e-14);
}

TEST(LinearAttention, IdenticalKeysAverageValues) {
  Tensor q = positive({1, 2, 2, 3}, 16), v = random_tensor({1, 2, 2, 3}, 17);
  Tensor k = Tensor::zeros({1, 2, 2, 3});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 6; ++i) k.data()[c * 6 + i] = 0.4 + 0.3 * static_cast<double>(c);
  Tensor out = linear_attention_core(q, k, v);
  for (std::size_t c = 0; c < 2; ++c) {
    double avg = 0.0;
    for (std::size_t j = 0; j < 6; ++j) avg += v.data()[c * 6 + j] / 6.0;
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out.data()[c * 6 + i], avg, 1e-12);
  }
  EXPECT_LT(max_abs_diff(out, quadratic_attention(q, k, v)), 1e-12);
}

TEST(LinearAttention, CoreGradcheck) {
  auto res = gradcheck(
      [](const std::vector<Tensor>& in) { return random_projection(linear_attention_core(in[0], in[1], in[2]), 18); },
      {positive({2, 3, 2, 3}, 19), positive({2, 3, 2, 3}, 20), random_tensor({2, 3, 2, 3}, 21)});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(LinearAttention, BlockGradcheck) {
  nn::Rng rng(22);
  LinearAttention lab(3, rng);
  auto res = gradcheck([&](const std::vector<Tensor>& in) { return random_projection(lab.forward(in[0]), 23); },
                       {random_tensor({1, 3, 3, 3}, 24)});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

namespace {

struct RefineFixture {
  RefinerConfig cfg{3, 4, 8};
  nn::Rng rng{25};
  Refiner refiner{cfg, rng};
  Tensor left = random_tensor({1, 3, 8, 16}, 26);
  Tensor right = random_tensor({1, 3, 8, 16}, 27);
  Tensor disp = random_tensor({1, 1, 8, 16}, 28, 0.3, 5.7);
};

}  // namespace

TEST(Refine, ZeroHeadsGiveExactIdentityAndUnitVariance) {
  RefineFixture f;
  DisparityOutput out = f.refiner.refine(f.disp, f.left, f.right, Mode::Train);
  ASSERT_EQ(out.disparity.shape(), f.disp.shape());
  for (std::size_t i = 0; i < f.disp.numel(); ++i) {
    EXPECT_EQ(out.disparity.data()[i], f.disp.data()[i]);
    EXPECT_EQ(std::exp(out.log_variance.data()[i]), 1.0);
  }
}

TEST(Refine, ClampsDisparityAndLogVariance) {
  RefineFixture f;
  nn::Registry r;
  f.refiner.collect(r, "refine");
  for (NamedTensor& p : r.params) {
    if (p.name == "refine.residual_head.bias") p.tensor.data()[0] = 100.0;
    if (p.name == "refine.log_var_head.bias") p.tensor.data()[0] = -50.0;
  }
  DisparityOutput out = f.refiner.refine(f.disp, f.left, f.right, Mode::Eval);
  for (double v : out.disparity.data()) EXPECT_EQ(v, 7.0);
  for (double v : out.log_variance.data()) EXPECT_EQ(v, -10.0);
}

TEST(Refine, RejectsResolutionMismatch) {
  RefineFixture f;
  EXPECT_THROW(f.refiner.refine(Tensor::zeros({1, 1, 4, 4}), f.left, f.right, Mode::Eval), ShapeError);
  EXPECT_THROW(f.refiner.refine(f.disp, f.left, random_tensor({1, 3, 8, 8}, 1), Mode::Eval), ShapeError);
}

TEST(Refine, GradcheckThroughWarpEncoderAttentionDecoder) {
  RefineFixture f;
  nn::Registry r;
  f.refiner.collect(r, "refine");
  // Non-zero heads so every path carries gradient.
  nn::Rng rng(29);
  for (NamedTensor& p : r.params)
    if (p.name.find("_head.weight") != std::string::npos) {
      Tensor k = nn::kaiming(p.tensor.shape(), p.tensor.dim(1) * 9, rng);
      std::copy(k.data().begin(), k.data().end(), p.tensor.data().begin());
    }
  GradcheckOptions opt;
  opt.max_entries = 80;
  auto res = gradcheck(
      [&](const std::vector<Tensor>& in) {
        DisparityOutput o = f.refiner.refine(in[0], in[1], in[2], Mode::Eval);
        return add(random_projection(o.disparity, 30), random_projection(o.log_variance, 31));
      },
      {f.disp, f.left, f.right}, opt);
  EXPECT_LT(res.max_rel_error, 1e-4);
}
