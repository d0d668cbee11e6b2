#pragma once

#include "evs/nn.hpp"

namespace evs {

struct DisparityDistribution {
  Tensor probs;  // [B,D,H,W], softmax over D
  std::size_t candidates = 0;
};

/// Per-pixel softmax over the disparity axis (max-subtracted).
DisparityDistribution cost_to_prob(const Tensor& volume);

/// Expected disparity sum_d P(d) * d, in units of the volume's own grid: [B,1,H,W].
Tensor soft_argmax(const DisparityDistribution& dist);

/// Bilinear upsample by factor with values multiplied by factor (disparity is
/// measured in pixels of the grid it lives on).
Tensor upsample_disparity(const Tensor& disparity, std::size_t factor);

/// out_i = sum_j (phi_q_i . phi_k_j) v_j / sum_j (phi_q_i . phi_k_j) over the
/// H*W tokens, evaluated as phi_q_i^T (sum_j phi_k_j v_j^T), i.e. O(N C^2).
/// Feature maps must be positive.
Tensor linear_attention_core(const Tensor& phi_q, const Tensor& phi_k, const Tensor& v);

/// Linear attention block: 1x1 projections to q/k/v, elu+1 feature map,
/// attention over spatial tokens, and a residual connection.
class LinearAttention {
 public:
  LinearAttention() = default;
  LinearAttention(std::size_t channels, nn::Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(nn::Registry& r, const std::string& prefix) const;

  nn::Conv2d query, key, value;
};

struct DisparityOutput {
  Tensor disparity;     // [B,1,H,W], pixels, clamped to [0, D-1]
  Tensor log_variance;  // [B,1,H,W], clamped to [-10, 10]
};

struct RefinerConfig {
  std::size_t rep_channels = 8;
  std::size_t width = 16;
  std::size_t max_disparity = 32;
  double log_var_min = -10.0;
  double log_var_max = 10.0;
};

/// Warp-based local-global refinement. The right representation is warped to
/// the left view with the initial disparity, and the residual correction and
/// log-variance are predicted from an encoder-decoder with linear attention at
/// the bottleneck followed by a dilated block. Both heads start at zero.
class Refiner {
 public:
  Refiner() = default;
  Refiner(const RefinerConfig& cfg, nn::Rng& rng);

  DisparityOutput refine(const Tensor& initial_disparity, const Tensor& left_rep, const Tensor& right_rep,
                         Mode mode);
  void collect(nn::Registry& r, const std::string& prefix) const;
  const RefinerConfig& config() const { return cfg_; }

 private:
  RefinerConfig cfg_;
  nn::ConvBnRelu enc1_, enc2_, enc3_, enc4_;
  LinearAttention attention_;
  nn::ConvBnRelu dec3_, dec2_, dec1_;
  nn::Conv2d dilated1_, dilated2_, dilated4_;
  nn::Conv2d residual_head_, log_var_head_;
};

}  // namespace evs
