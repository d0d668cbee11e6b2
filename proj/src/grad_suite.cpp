#include "evs/grad_suite.hpp"

#include <functional>
#include <stdexcept>

#include "evs/aggregation.hpp"
#include "evs/disparity.hpp"
#include "evs/events.hpp"
#include "evs/gradcheck.hpp"
#include "evs/loss.hpp"

namespace evs {

namespace {

struct Case {
  const char* module;
  const char* op;
  std::function<GradcheckResult(std::uint64_t)> run;
};

GradcheckResult check(const ScalarFn& fn, std::vector<Tensor> inputs, std::size_t max_entries = 0) {
  GradcheckOptions opt;
  opt.max_entries = max_entries;
  return gradcheck(fn, std::move(inputs), opt);
}

std::vector<Case> cases() {
  std::vector<Case> c;
  c.push_back({"tensor-core", "conv2d", [](std::uint64_t s) {
                 return check(
                     [](const std::vector<Tensor>& in) {
                       return random_projection(conv2d(in[0], in[1], in[2], {2, 1, 1}), 1);
                     },
                     {random_tensor({2, 3, 7, 6}, s), random_tensor({4, 3, 3, 3}, s + 1), random_tensor({4}, s + 2)});
               }});
  c.push_back({"tensor-core", "conv2d_dilated", [](std::uint64_t s) {
                 return check(
                     [](const std::vector<Tensor>& in) {
                       return random_projection(conv2d(in[0], in[1], Tensor(), {1, 2, 2}), 2);
                     },
                     {random_tensor({1, 2, 6, 6}, s), random_tensor({3, 2, 3, 3}, s + 1)});
               }});
  c.push_back({"tensor-core", "batchnorm_train", [](std::uint64_t s) {
                 return check(
                     [](const std::vector<Tensor>& in) {
                       BatchNormState st{Tensor::zeros({3}), Tensor::full({3}, 1.0)};
                       return random_projection(batchnorm2d(in[0], in[1], in[2], st, Mode::Train), 3);
                     },
                     {random_tensor({2, 3, 4, 4}, s), random_tensor({3}, s + 1, 0.5, 1.5), random_tensor({3}, s + 2)});
               }});
  c.push_back({"tensor-core", "deform_conv2d", [](std::uint64_t s) {
                 return check(
                     [](const std::vector<Tensor>& in) {
                       return random_projection(deform_conv2d(in[0], in[1], in[2], in[3]), 4);
                     },
                     {random_tensor({1, 2, 5, 5}, s), random_tensor({1, 18, 5, 5}, s + 1, -1.3, 1.3),
                      random_tensor({3, 2, 3, 3}, s + 2), random_tensor({3}, s + 3)});
               }});
  c.push_back({"tensor-core", "grid_warp", [](std::uint64_t s) {
                 return check(
                     [](const std::vector<Tensor>& in) { return random_projection(grid_warp(in[0], in[1]).output, 5); },
                     {random_tensor({2, 3, 4, 7}, s), random_tensor({2, 1, 4, 7}, s + 1, 0.1, 4.9)});
               }});
  c.push_back({"tensor-core", "softmax", [](std::uint64_t s) {
                 return check([](const std::vector<Tensor>& in) { return random_projection(softmax(in[0], 1), 6); },
                              {random_tensor({2, 5, 3, 3}, s, -3, 3)});
               }});
  c.push_back({"tensor-core", "maxpool_resize", [](std::uint64_t s) {
                 return check(
                     [](const std::vector<Tensor>& in) {
                       return random_projection(resize_bilinear(maxpool2d(in[0], 2, 2), 5, 7), 7);
                     },
                     {random_tensor({1, 2, 6, 8}, s)});
               }});
  c.push_back({"tensor-core", "elementwise", [](std::uint64_t s) {
                 return check(
                     [](const std::vector<Tensor>& in) {
                       Tensor y = add(mul(silu(in[0]), sigmoid(in[1])), elu_plus_one(sub(in[0], in[1])));
                       return random_projection(add(y, exp(scale(in[1], 0.5))), 8);
                     },
                     {random_tensor({2, 3, 4}, s), random_tensor({2, 3, 4}, s + 1)});
               }});
  c.push_back({"event-ingest", "concentrate", [](std::uint64_t s) {
                 Tensor stacks = random_tensor({1, 3, 5, 5}, s);
                 for (double& v : stacks.data()) v = v > 0.3 ? 1.0 : (v < -0.3 ? -1.0 : 0.0);
                 return check(
                     [stacks](const std::vector<Tensor>& in) {
                       return random_projection(silu(conv2d(stacks, in[0], in[1])), 9);
                     },
                     {random_tensor({4, 3, 1, 1}, s + 1), random_tensor({4}, s + 2)});
               }});
  c.push_back({"stereo-backbone", "deform_residual_block", [](std::uint64_t s) {
                 nn::Rng rng(s);
                 auto block = std::make_shared<DeformResidualBlock>(3, rng);
                 return check(
                     [block](const std::vector<Tensor>& in) {
                       return random_projection(block->forward(in[0], Mode::Eval), 10);
                     },
                     {random_tensor({1, 3, 5, 5}, s + 1)});
               }});
  c.push_back({"cost-volume", "correlate", [](std::uint64_t s) {
                 return check(
                     [](const std::vector<Tensor>& in) {
                       return random_projection(correlate(in[0], in[1], 4).volume, 11);
                     },
                     {random_tensor({2, 3, 3, 7}, s), random_tensor({2, 3, 3, 7}, s + 1)});
               }});
  c.push_back({"aggregation", "aggregate_two_stage", [](std::uint64_t s) {
                 nn::Rng rng(s);
                 auto agg = std::make_shared<Aggregator>(std::vector<std::size_t>{6}, AggregationConfig{2, 4, false}, rng);
                 return check(
                     [agg](const std::vector<Tensor>& in) {
                       CostVolumePyramid p;
                       p.volumes = {in[0]};
                       p.candidates = {6};
                       p.strides = {4};
                       return random_projection(agg->aggregate(p, Mode::Eval).volumes[0], 12);
                     },
                     {random_tensor({1, 6, 8, 8}, s + 1)}, 120);
               }});
  c.push_back({"disparity-refine", "soft_argmax", [](std::uint64_t s) {
                 return check(
                     [](const std::vector<Tensor>& in) { return random_projection(soft_argmax(cost_to_prob(in[0])), 13); },
                     {random_tensor({2, 5, 3, 4}, s)});
               }});
  c.push_back({"disparity-refine", "linear_attention", [](std::uint64_t s) {
                 nn::Rng rng(s);
                 auto lab = std::make_shared<LinearAttention>(3, rng);
                 return check([lab](const std::vector<Tensor>& in) { return random_projection(lab->forward(in[0]), 14); },
                              {random_tensor({2, 3, 3, 3}, s + 1)});
               }});
  c.push_back({"disparity-refine", "refine", [](std::uint64_t s) {
                 nn::Rng rng(s);
                 auto refiner = std::make_shared<Refiner>(RefinerConfig{3, 4, 8}, rng);
                 nn::Registry r;
                 refiner->collect(r, "refine");
                 for (NamedTensor& p : r.params)
                   if (p.name.find("_head.weight") != std::string::npos) {
                     Tensor k = nn::kaiming(p.tensor.shape(), p.tensor.dim(1) * 9, rng);
                     std::copy(k.data().begin(), k.data().end(), p.tensor.data().begin());
                   }
                 return check(
                     [refiner](const std::vector<Tensor>& in) {
                       DisparityOutput o = refiner->refine(in[0], in[1], in[2], Mode::Eval);
                       return add(random_projection(o.disparity, 15), random_projection(o.log_variance, 16));
                     },
                     {random_tensor({1, 1, 8, 8}, s + 1, 0.3, 5.7), random_tensor({1, 3, 8, 8}, s + 2),
                      random_tensor({1, 3, 8, 8}, s + 3)},
                     80);
               }});
  c.push_back({"loss-metrics", "kl_uncertainty_loss", [](std::uint64_t s) {
                 GroundTruth gt{random_tensor({1, 1, 4, 4}, s, 0, 6), Tensor::full({1, 1, 4, 4}, 1.0)};
                 gt.valid.data()[5] = 0.0;
                 return check(
                     [gt](const std::vector<Tensor>& in) { return kl_uncertainty_loss(in[0], in[1], gt, {2.0, 1.0}); },
                     {random_tensor({1, 1, 4, 4}, s + 1, 0, 6), random_tensor({1, 1, 4, 4}, s + 2, -2, 2)});
               }});
  c.push_back({"loss-metrics", "smooth_l1", [](std::uint64_t s) {
                 GroundTruth gt{random_tensor({1, 1, 4, 4}, s, 0, 6), Tensor::full({1, 1, 4, 4}, 1.0)};
                 return check([gt](const std::vector<Tensor>& in) { return masked_smooth_l1(in[0], gt, 1.0); },
                              {random_tensor({1, 1, 4, 4}, s + 1, 0, 6)});
               }});
  return c;
}

}  // namespace

std::vector<std::string> grad_suite_modules() {
  return {"tensor-core", "event-ingest", "stereo-backbone", "cost-volume", "aggregation", "disparity-refine",
          "loss-metrics"};
}

std::vector<GradReport> run_grad_suite(const std::string& selector, std::uint64_t seed, double tolerance) {
  const auto modules = grad_suite_modules();
  if (selector != "all" && std::find(modules.begin(), modules.end(), selector) == modules.end()) {
    throw std::invalid_argument("unknown gradcheck module '" + selector + "'");
  }
  std::vector<GradReport> out;
  for (const Case& c : cases()) {
    if (selector != "all" && selector != c.module) continue;
    const GradcheckResult r = c.run(seed * 1000 + 17);
    out.push_back({c.module, c.op, r.max_rel_error, r.checked, r.max_rel_error < tolerance});
  }
  return out;
}

}  // namespace evs
