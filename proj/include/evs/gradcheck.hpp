#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evs/tensor.hpp"

namespace evs {

struct GradcheckOptions {
  double eps = 1e-6;
  /// Denominator floor for the relative error, so near-zero gradients are
  /// judged on absolute error instead.
  double rel_floor = 1e-3;
  /// Entries checked per input; 0 checks all of them.
  std::size_t max_entries = 0;
  std::uint64_t seed = 7;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of fn against central finite differences
/// for every input. fn must return a scalar and may be called many times.
GradcheckResult gradcheck(const ScalarFn& fn, std::vector<Tensor> inputs, const GradcheckOptions& opt = {});

/// sum(t * w) for a fixed random w; turns any op output into a scalar with
/// non-degenerate gradients.
Tensor random_projection(const Tensor& t, std::uint64_t seed);

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

}  // namespace evs
