#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ccdn/autodiff.hpp"

namespace ccdn::ad {

// Builds a scalar from the leaf it is handed. Must be deterministic.
using ScalarFn = std::function<Var(Tape&, Var)>;

struct GradCheckResult {
  Real max_rel_error = 0.0;
  std::size_t worst_index = 0;
  Real analytic_at_worst = 0.0;
  Real numeric_at_worst = 0.0;
  std::size_t checked = 0;
};

// Compares backward() against central differences
//   (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)
// using |a - n| / max(|a|, |n|, 1e-12) per element. When `indices` is empty
// every element of x is checked.
GradCheckResult finite_difference_check(const ScalarFn& f, const Shape& shape,
                                        const std::vector<Real>& x, Real eps,
                                        std::span<const std::size_t> indices = {});

}  // namespace ccdn::ad
