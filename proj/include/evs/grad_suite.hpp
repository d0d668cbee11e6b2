#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evs {

struct GradReport {
  std::string module;
  std::string op;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool pass = false;
};

/// Module names accepted by run_grad_suite, besides "all".
std::vector<std::string> grad_suite_modules();

/// Finite-difference checks of every differentiable op in the selected module
/// at 64-bit, on small random inputs drawn from seed. Throws
/// std::invalid_argument on an unknown selector.
std::vector<GradReport> run_grad_suite(const std::string& selector, std::uint64_t seed, double tolerance = 1e-4);

}  // namespace evs
