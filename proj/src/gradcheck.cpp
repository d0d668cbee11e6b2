#include "evs/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "evs/ops.hpp"

namespace evs {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(shape, std::move(v));
}

Tensor random_projection(const Tensor& t, std::uint64_t seed) {
  return sum(mul(t, random_tensor(t.shape(), seed)));
}

GradcheckResult gradcheck(const ScalarFn& fn, std::vector<Tensor> inputs, const GradcheckOptions& opt) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape::current().clear();
  Tensor loss = fn(inputs);
  backward(loss);

  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }

  GradcheckResult result;
  NoGradGuard no_grad;
  std::mt19937_64 rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].data();
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opt.max_entries && idx.size() > opt.max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_entries);
    }
    for (std::size_t i : idx) {
      const double saved = data[i];
      data[i] = saved + opt.eps;
      const double up = fn(inputs).item();
      data[i] = saved - opt.eps;
      const double down = fn(inputs).item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({opt.rel_floor, std::abs(a), std::abs(numeric)});
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      if (rel_err > result.max_rel_error) {
        result.max_rel_error = rel_err;
        result.worst_input = k;
        result.worst_index = i;
      }
      ++result.checked;
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return result;
}

}  // namespace evs
