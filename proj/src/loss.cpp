#include "evs/loss.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "evs/ops.hpp"

namespace evs {

namespace {

void check_like(const Tensor& a, const Tensor& b, const char* op, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + what + " " + shape_str(b.shape()) + " does not match " +
                     shape_str(a.shape()));
  }
}

void check_gt(const Tensor& pred, const GroundTruth& gt, const char* op) {
  check_like(pred, gt.disparity, op, "ground truth");
  check_like(pred, gt.valid, op, "mask");
}

double smooth_l1_grad(double r, double beta) {
  if (std::abs(r) < beta) return r / beta;
  return r > 0 ? 1.0 : -1.0;
}

}  // namespace

std::size_t count_valid(const Tensor& mask, const char* op) {
  std::size_t n = 0;
  for (double m : mask.data()) n += m > 0.5;
  if (n == 0) throw std::invalid_argument(std::string(op) + ": mask has no valid pixels");
  return n;
}

double smooth_l1(double r, double beta) {
  if (beta <= 0) throw std::invalid_argument("smooth_l1: beta must be positive");
  const double a = std::abs(r);
  return a < beta ? 0.5 * r * r / beta : a - 0.5 * beta;
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta) {
  if (beta <= 0) throw std::invalid_argument("smooth_l1: beta must be positive");
  check_like(pred, target, "smooth_l1", "target");
  Tensor out = Tensor::zeros(pred.shape());
  auto p = pred.data();
  auto t = target.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = smooth_l1(p[i] - t[i], beta);
  if (autograd::should_record({&pred})) {
    out.set_requires_grad(true);
    Tape::current().record("smooth_l1", out, [pred, target, beta](std::span<const double> g) {
      auto gp = autograd::grad_of(pred);
      auto p = pred.data();
      auto t = target.data();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[i] * smooth_l1_grad(p[i] - t[i], beta);
    });
  }
  return out;
}

Tensor masked_smooth_l1(const Tensor& pred, const GroundTruth& gt, double beta) {
  if (beta <= 0) throw std::invalid_argument("smooth_l1: beta must be positive");
  check_gt(pred, gt, "masked_smooth_l1");
  const std::size_t n = count_valid(gt.valid, "masked_smooth_l1");
  auto p = pred.data();
  auto d = gt.disparity.data();
  auto m = gt.valid.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (m[i] > 0.5) acc += smooth_l1(p[i] - d[i], beta);
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  autograd::check_finite("masked_smooth_l1", out);
  if (autograd::should_record({&pred})) {
    out.set_requires_grad(true);
    Tape::current().record("masked_smooth_l1", out, [pred, gt, beta, n](std::span<const double> g) {
      auto gp = autograd::grad_of(pred);
      auto p = pred.data();
      auto d = gt.disparity.data();
      auto m = gt.valid.data();
      const double s = g[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < gp.size(); ++i)
        if (m[i] > 0.5) gp[i] += s * smooth_l1_grad(p[i] - d[i], beta);
    });
  }
  return out;
}

Tensor kl_uncertainty_loss(const Tensor& pred, const Tensor& log_var, const GroundTruth& gt, const LossConfig& cfg) {
  if (cfg.alpha <= 0) throw std::invalid_argument("kl_uncertainty_loss: alpha must be positive");
  if (cfg.smooth_l1_beta <= 0) throw std::invalid_argument("smooth_l1: beta must be positive");
  check_gt(pred, gt, "kl_uncertainty_loss");
  check_like(pred, log_var, "kl_uncertainty_loss", "log-variance");
  const std::size_t n = count_valid(gt.valid, "kl_uncertainty_loss");
  auto p = pred.data();
  auto s = log_var.data();
  auto d = gt.disparity.data();
  auto m = gt.valid.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (m[i] > 0.5) acc += smooth_l1(p[i] - d[i], cfg.smooth_l1_beta) * std::exp(-s[i]) + cfg.alpha * s[i];
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  autograd::check_finite("kl_uncertainty_loss", out);
  if (autograd::should_record({&pred, &log_var})) {
    out.set_requires_grad(true);
    Tape::current().record("kl_uncertainty_loss", out, [pred, log_var, gt, cfg, n](std::span<const double> g) {
      auto p = pred.data();
      auto s = log_var.data();
      auto d = gt.disparity.data();
      auto m = gt.valid.data();
      const double scale = g[0] / static_cast<double>(n);
      std::span<double> gp, gs;
      if (pred.requires_grad()) gp = autograd::grad_of(pred);
      if (log_var.requires_grad()) gs = autograd::grad_of(log_var);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (m[i] <= 0.5) continue;
        const double r = p[i] - d[i];
        const double inv_var = std::exp(-s[i]);
        if (!gp.empty()) gp[i] += scale * smooth_l1_grad(r, cfg.smooth_l1_beta) * inv_var;
        if (!gs.empty()) gs[i] += scale * (cfg.alpha - smooth_l1(r, cfg.smooth_l1_beta) * inv_var);
      }
    });
  }
  return out;
}

double gaussian_kl(double mean_a, double var_a, double mean_b, double var_b) {
  if (var_a <= 0 || var_b <= 0) throw std::invalid_argument("gaussian_kl: variances must be positive");
  const double dm = mean_a - mean_b;
  return 0.5 * ((dm * dm) / var_b + var_a / var_b - 1.0 + std::log(var_b / var_a));
}

Tensor total_loss(const std::vector<SupervisedOutput>& outputs, const GroundTruth& gt,
                  const std::vector<double>& weights, const LossConfig& cfg) {
  if (outputs.empty()) throw std::invalid_argument("total_loss: no supervised outputs");
  if (outputs.size() != weights.size()) {
    throw std::invalid_argument("total_loss: " + std::to_string(weights.size()) + " weights for " +
                                std::to_string(outputs.size()) + " outputs");
  }
  Tensor total;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (weights[i] < 0) throw std::invalid_argument("total_loss: weights must be non-negative");
    const SupervisedOutput& o = outputs[i];
    Tensor term = o.log_variance.defined() ? kl_uncertainty_loss(o.disparity, o.log_variance, gt, cfg)
                                           : masked_smooth_l1(o.disparity, gt, cfg.smooth_l1_beta);
    term = scale(term, weights[i]);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

MetricReport metrics(const Tensor& pred, const GroundTruth& gt) {
  check_gt(pred, gt, "metrics");
  MetricReport r;
  r.n_valid = count_valid(gt.valid, "metrics");
  auto p = pred.data();
  auto d = gt.disparity.data();
  auto m = gt.valid.data();
  double abs_sum = 0.0, sq_sum = 0.0;
  std::size_t over1 = 0, over2 = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (m[i] <= 0.5) continue;
    const double e = std::abs(p[i] - d[i]);
    abs_sum += e;
    sq_sum += e * e;
    over1 += e > 1.0;
    over2 += e > 2.0;
  }
  const double n = static_cast<double>(r.n_valid);
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);
  r.pe1_percent = 100.0 * static_cast<double>(over1) / n;
  r.pe2_percent = 100.0 * static_cast<double>(over2) / n;
  return r;
}

MetricReport combine(const std::vector<MetricReport>& reports) {
  MetricReport out;
  double sq = 0.0;
  for (const MetricReport& r : reports) {
    const double n = static_cast<double>(r.n_valid);
    out.n_valid += r.n_valid;
    out.mae += r.mae * n;
    sq += r.rmse * r.rmse * n;
    out.pe1_percent += r.pe1_percent * n;
    out.pe2_percent += r.pe2_percent * n;
  }
  if (out.n_valid == 0) throw std::invalid_argument("combine: no valid pixels in any report");
  const double n = static_cast<double>(out.n_valid);
  out.mae /= n;
  out.rmse = std::sqrt(sq / n);
  out.pe1_percent /= n;
  out.pe2_percent /= n;
  return out;
}

std::string to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["mae"] = r.mae;
  j["rmse"] = r.rmse;
  j["pe1_percent"] = r.pe1_percent;
  j["pe2_percent"] = r.pe2_percent;
  j["n_valid"] = r.n_valid;
  return j.dump();
}

std::string to_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::size_t name_w = 6;
  for (const auto& [name, _] : rows) name_w = std::max(name_w, name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "sample" << std::right << std::setw(10) << "MAE"
     << std::setw(10) << "RMSE" << std::setw(10) << "1PE%" << std::setw(10) << "2PE%" << std::setw(10) << "N"
     << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& [name, r] : rows) {
    os << std::left << std::setw(static_cast<int>(name_w)) << name << std::right << std::setw(10) << r.mae
       << std::setw(10) << r.rmse << std::setw(10) << r.pe1_percent << std::setw(10) << r.pe2_percent
       << std::setw(10) << r.n_valid << '\n';
  }
  return os.str();
}

std::vector<std::pair<double, double>> sparsification_curve(const Tensor& pred, const Tensor& log_var,
                                                             const GroundTruth& gt, std::size_t steps) {
  if (steps < 2) throw std::invalid_argument("sparsification_curve: steps must be >= 2");
  check_gt(pred, gt, "sparsification_curve");
  check_like(pred, log_var, "sparsification_curve", "log-variance");
  count_valid(gt.valid, "sparsification_curve");
  auto p = pred.data();
  auto s = log_var.data();
  auto d = gt.disparity.data();
  auto m = gt.valid.data();
  std::vector<std::pair<double, double>> pix;  // (log variance, abs error)
  for (std::size_t i = 0; i < p.size(); ++i)
    if (m[i] > 0.5) pix.emplace_back(s[i], std::abs(p[i] - d[i]));
  // Ascending by variance, so removing the top fraction trims the tail.
  std::stable_sort(pix.begin(), pix.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<double> prefix(pix.size() + 1, 0.0);
  for (std::size_t i = 0; i < pix.size(); ++i) prefix[i + 1] = prefix[i] + pix[i].second;

  std::vector<std::pair<double, double>> curve;
  for (std::size_t k = 0; k < steps; ++k) {
    const double frac = static_cast<double>(k) / static_cast<double>(steps);
    const auto removed = static_cast<std::size_t>(std::floor(frac * static_cast<double>(pix.size())));
    const std::size_t keep = std::max<std::size_t>(pix.size() - removed, 1);
    curve.emplace_back(frac, prefix[keep] / static_cast<double>(keep));
  }
  return curve;
}

}  // namespace evs
