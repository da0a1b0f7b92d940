#pragma once

#include <cstdint>
#include <functional>

#include "pv/tensor.hpp"

namespace pv {

struct GradCheckOptions {
  double step = 1e-6;
  /// Number of coordinates probed; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;   // at worst_index
  std::size_t checked = 0;
};

using ScalarFunction = std::function<Tensor<double>(const Tensor<double>&)>;

/// Compares reverse-mode gradients of `f` at `x` with central differences,
/// in 64-bit. The error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckResult grad_check(const ScalarFunction& f, const Tensor<double>& x, const GradCheckOptions& options = {});

/// Same check with respect to a tensor that `f` reads implicitly, such as a
/// layer parameter. `param` is perturbed in place and restored afterwards.
GradCheckResult grad_check(const std::function<Tensor<double>()>& f, Tensor<double> param,
                           const GradCheckOptions& options = {});

}  // namespace pv
