#include "ccdn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ccdn::ad {
namespace {

Real evaluate(const ScalarFn& f, const Shape& shape, const std::vector<Real>& x) {
  Tape tape;
  Var leaf = tape.leaf(shape, x, false);
  Var out = f(tape, leaf);
  if (out.size() != 1) throw ShapeError("finite_difference_check: f must return a scalar");
  return out.value()[0];
}

}  // namespace

GradCheckResult finite_difference_check(const ScalarFn& f, const Shape& shape,
                                        const std::vector<Real>& x, Real eps,
                                        std::span<const std::size_t> indices) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("finite_difference_check: eps must lie in [1e-7, 1e-3]");
  }
  for (Real v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("finite_difference_check: non-finite x");
  }

  Tape tape;
  Var leaf = tape.leaf(shape, x, true);
  Var out = f(tape, leaf);
  if (out.size() != 1) throw ShapeError("finite_difference_check: f must return a scalar");
  const auto analytic = backward(out, tape).of(leaf);

  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(x.size());
    std::iota(all.begin(), all.end(), 0);
    indices = all;
  }

  GradCheckResult res;
  std::vector<Real> probe = x;
  for (std::size_t i : indices) {
    if (i >= x.size()) throw std::out_of_range("finite_difference_check: index out of range");
    probe[i] = x[i] + eps;
    const Real up = evaluate(f, shape, probe);
    probe[i] = x[i] - eps;
    const Real down = evaluate(f, shape, probe);
    probe[i] = x[i];
    const Real numeric = (up - down) / (2.0 * eps);
    const Real a = analytic[i];
    const Real denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
    const Real err = std::abs(a - numeric) / denom;
    if (res.checked++ == 0 || err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_index = i;
      res.analytic_at_worst = a;
      res.numeric_at_worst = numeric;
    }
  }
  return res;
}

}  // namespace ccdn::ad
