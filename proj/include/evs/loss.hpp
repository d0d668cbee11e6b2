#pragma once

#include <string>
#include <utility>
#include <vector>

#include "evs/tensor.hpp"

namespace evs {

struct GroundTruth {
  Tensor disparity;  // [B,1,H,W], pixels
  Tensor valid;      // [B,1,H,W], 1 where the disparity is known
};

struct LossConfig {
  double alpha = 2.0;
  double smooth_l1_beta = 1.0;
};

/// Returns the number of valid pixels; throws if it is zero.
std::size_t count_valid(const Tensor& mask, const char* op);

/// 0.5 r^2 / beta for |r| < beta, |r| - 0.5 beta otherwise.
double smooth_l1(double r, double beta);

/// Elementwise smooth-L1 of pred - target, differentiable w.r.t. pred.
Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta);

/// Mean smooth-L1 over the valid pixels.
Tensor masked_smooth_l1(const Tensor& pred, const GroundTruth& gt, double beta);

/// mean_valid[ SmoothL1(pred, gt) * exp(-log_var) + alpha * log_var ].
/// Differentiable w.r.t. pred and log_var.
Tensor kl_uncertainty_loss(const Tensor& pred, const Tensor& log_var, const GroundTruth& gt, const LossConfig& cfg);

/// KL(a || b) for the 1-D Gaussians a = N(mean_a, var_a), b = N(mean_b, var_b).
double gaussian_kl(double mean_a, double var_a, double mean_b, double var_b);

/// Loss contributor: final outputs carry a log-variance, intermediate heads
/// leave it undefined and fall back to smooth-L1.
struct SupervisedOutput {
  Tensor disparity;
  Tensor log_variance;
};

/// sum_i w_i * L_i, each output already at ground-truth resolution.
Tensor total_loss(const std::vector<SupervisedOutput>& outputs, const GroundTruth& gt,
                  const std::vector<double>& weights, const LossConfig& cfg);

struct MetricReport {
  double mae = 0.0;
  double rmse = 0.0;
  double pe1_percent = 0.0;
  double pe2_percent = 0.0;
  std::size_t n_valid = 0;
};

MetricReport metrics(const Tensor& pred, const GroundTruth& gt);

/// Valid-pixel-weighted combination of per-sample reports.
MetricReport combine(const std::vector<MetricReport>& reports);

std::string to_json(const MetricReport& r);
std::string to_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

/// (fraction_removed, mae_remaining) for fractions k/steps, k = 0..steps-1,
/// removing the pixels with the largest predicted variance first.
std::vector<std::pair<double, double>> sparsification_curve(const Tensor& pred, const Tensor& log_var,
                                                             const GroundTruth& gt, std::size_t steps);

}  // namespace evs
