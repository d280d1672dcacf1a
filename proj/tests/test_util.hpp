#pragma once

#include <vector>

#include "ccdn/autodiff.hpp"
#include "ccdn/gradcheck.hpp"
#include "ccdn/layers.hpp"

namespace ccdn::testing {

inline std::vector<Real> random_values(std::size_t n, std::uint64_t seed, Real lo = -1.0,
                                       Real hi = 1.0) {
  layers::Rng rng(seed);
  std::vector<Real> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// sum(y * w) with fixed random weights, so every output element carries a
// distinct, order-one sensitivity.
inline ad::Var weighted_sum(ad::Tape& tape, ad::Var y, std::uint64_t seed = 99) {
  auto w = random_values(y.size(), seed, 0.5, 1.5);
  layers::Rng signs(seed + 1);
  for (auto& x : w) x *= signs.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
  return ad::sum(ad::mul(y, tape.constant(y.shape(), w)));
}

// Max relative error of backward() against central differences for a map
// x -> y, reduced by weighted_sum.
template <typename F>
Real max_grad_error(F&& op, const Shape& shape, const std::vector<Real>& x, Real eps = 1e-5) {
  auto f = [&](ad::Tape& tape, ad::Var v) { return weighted_sum(tape, op(tape, v)); };
  return ad::finite_difference_check(f, shape, x, eps).max_rel_error;
}

}  // namespace ccdn::testing
