#include <algorithm>
#include <cmath>
#include <numeric>

#include "ccdn/autodiff.hpp"

namespace ccdn::ad {
namespace {

constexpr Real kZeroMagnitude = 1e-12;

void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands must live on the same tape");
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Elementwise unary op where the derivative is expressed through the input
// value x and the output value y.
template <typename Fwd, typename Deriv>
Var unary(const char* name, Var a, Fwd fwd, Deriv deriv) {
  auto x = a.value();
  std::vector<Real> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return a.tape()->record(name, a.shape(), std::move(y), {a},
                          [deriv](const BackwardContext& c) {
                            auto x = c.in(0);
                            auto y = c.out();
                            auto g = c.grad_out();
                            auto gx = c.grad_in(0);
                            for (std::size_t i = 0; i < gx.size(); ++i) {
                              gx[i] += g[i] * deriv(x[i], y[i]);
                            }
                          });
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  auto x = a.value();
  auto z = b.value();
  std::vector<Real> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[i];
  return a.tape()->record("add", a.shape(), std::move(y), {a, b}, [](const BackwardContext& c) {
    auto g = c.grad_out();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!c.needs(k)) continue;
      auto gk = c.grad_in(k);
      for (std::size_t i = 0; i < g.size(); ++i) gk[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  auto x = a.value();
  auto z = b.value();
  std::vector<Real> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] - z[i];
  return a.tape()->record("sub", a.shape(), std::move(y), {a, b}, [](const BackwardContext& c) {
    auto g = c.grad_out();
    if (c.needs(0)) {
      auto ga = c.grad_in(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (c.needs(1)) {
      auto gb = c.grad_in(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  auto x = a.value();
  auto z = b.value();
  std::vector<Real> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
  return a.tape()->record("mul", a.shape(), std::move(y), {a, b}, [](const BackwardContext& c) {
    auto g = c.grad_out();
    auto x = c.in(0);
    auto z = c.in(1);
    if (c.needs(0)) {
      auto ga = c.grad_in(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * z[i];
    }
    if (c.needs(1)) {
      auto gb = c.grad_in(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Var div(Var a, Var b) {
  require_same_shape(a, b, "div");
  auto x = a.value();
  auto z = b.value();
  std::vector<Real> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] / z[i];
  return a.tape()->record("div", a.shape(), std::move(y), {a, b}, [](const BackwardContext& c) {
    auto g = c.grad_out();
    auto z = c.in(1);
    auto y = c.out();
    if (c.needs(0)) {
      auto ga = c.grad_in(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / z[i];
    }
    if (c.needs(1)) {
      auto gb = c.grad_in(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * y[i] / z[i];
    }
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, Real s) {
  return unary(
      "scale", a, [s](Real x) { return s * x; }, [s](Real, Real) { return s; });
}

Var add_scalar(Var a, Real s) {
  return unary(
      "add_scalar", a, [s](Real x) { return x + s; }, [](Real, Real) { return 1.0; });
}

Var mul_scalar(Var a, Var s) {
  require_same_tape(a, s, "mul_scalar");
  if (s.size() != 1) throw ShapeError("mul_scalar: factor must hold one element");
  const Real k = s.value()[0];
  auto x = a.value();
  std::vector<Real> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = k * x[i];
  return a.tape()->record("mul_scalar", a.shape(), std::move(y), {a, s},
                          [](const BackwardContext& c) {
                            auto g = c.grad_out();
                            auto x = c.in(0);
                            const Real k = c.in(1)[0];
                            if (c.needs(0)) {
                              auto ga = c.grad_in(0);
                              for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * k;
                            }
                            if (c.needs(1)) {
                              Real acc = 0.0;
                              for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
                              c.grad_in(1)[0] += acc;
                            }
                          });
}

Var square(Var a) {
  return unary(
      "square", a, [](Real x) { return x * x; }, [](Real x, Real) { return 2.0 * x; });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Var log(Var a) {
  for (Real v : a.value()) {
    if (!(v > 0.0)) throw std::domain_error("log: non-positive input");
  }
  return unary(
      "log", a, [](Real x) { return std::log(x); }, [](Real x, Real) { return 1.0 / x; });
}

Var sqrt(Var a) {
  for (Real v : a.value()) {
    if (v < 0.0) throw std::domain_error("sqrt: negative input");
  }
  return unary(
      "sqrt", a, [](Real x) { return std::sqrt(x); },
      [](Real, Real y) { return y < kZeroMagnitude ? 0.0 : 0.5 / y; });
}

Var abs(Var a) {
  return unary(
      "abs", a, [](Real x) { return std::abs(x); },
      [](Real x, Real) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](Real x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const Real e = std::exp(x);
        return e / (1.0 + e);
      },
      [](Real, Real y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return 1.0 - y * y; });
}

Var elu(Var a) {
  return unary(
      "elu", a, [](Real x) { return x > 0.0 ? x : std::expm1(x); },
      [](Real x, Real y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Var cos(Var a) {
  return unary(
      "cos", a, [](Real x) { return std::cos(x); }, [](Real x, Real) { return -std::sin(x); });
}

Var sin(Var a) {
  return unary(
      "sin", a, [](Real x) { return std::sin(x); }, [](Real x, Real) { return std::cos(x); });
}

Var atan2(Var y, Var x) {
  require_same_shape(y, x, "atan2");
  auto yv = y.value();
  auto xv = x.value();
  std::vector<Real> out(yv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::hypot(xv[i], yv[i]) < kZeroMagnitude ? 0.0 : std::atan2(yv[i], xv[i]);
  }
  return y.tape()->record("atan2", y.shape(), std::move(out), {y, x},
                          [](const BackwardContext& c) {
                            auto g = c.grad_out();
                            auto yv = c.in(0);
                            auto xv = c.in(1);
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              const Real r2 = xv[i] * xv[i] + yv[i] * yv[i];
                              if (std::sqrt(r2) < kZeroMagnitude) continue;
                              if (c.needs(0)) c.grad_in(0)[i] += g[i] * xv[i] / r2;
                              if (c.needs(1)) c.grad_in(1)[i] -= g[i] * yv[i] / r2;
                            }
                          });
}

Var sum(Var a) {
  auto x = a.value();
  const Real s = std::accumulate(x.begin(), x.end(), 0.0);
  return a.tape()->record("sum", {1}, {s}, {a}, [](const BackwardContext& c) {
    const Real g = c.grad_out()[0];
    for (auto& v : c.grad_in(0)) v += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<Real>(a.size())); }

Var reshape(Var a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto x = a.value();
  return a.tape()->record("reshape", std::move(shape), std::vector<Real>(x.begin(), x.end()), {a},
                          [](const BackwardContext& c) {
                            auto g = c.grad_out();
                            auto gx = c.grad_in(0);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                          });
}

namespace {

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// For each output flat index, the flat index of the source element.
std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& axes) {
  const std::size_t r = in.size();
  auto in_st = strides_of(in);
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = in[axes[i]];
  std::vector<std::size_t> src_st(r);
  for (std::size_t i = 0; i < r; ++i) src_st[i] = in_st[axes[i]];

  const std::size_t n = numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  const std::size_t inner = out.back();
  const std::size_t inner_st = src_st.back();
  std::size_t o = 0;
  while (o < n) {
    std::size_t base = 0;
    for (std::size_t i = 0; i + 1 < r; ++i) base += idx[i] * src_st[i];
    for (std::size_t k = 0; k < inner; ++k) map[o++] = base + k * inner_st;
    for (std::size_t i = r - 1; i-- > 0;) {
      if (++idx[i] < out[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace

Var permute(Var a, const std::vector<std::size_t>& axes) {
  const Shape& in = a.shape();
  if (axes.size() != in.size()) throw ShapeError("permute: axis count mismatch");
  std::vector<bool> seen(axes.size(), false);
  for (auto ax : axes) {
    if (ax >= axes.size() || seen[ax]) throw ShapeError("permute: invalid axis permutation");
    seen[ax] = true;
  }
  Shape out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[axes[i]];
  auto map = permute_index(in, axes);
  auto x = a.value();
  std::vector<Real> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[map[i]];
  return a.tape()->record("permute", std::move(out), std::move(y), {a},
                          [map = std::move(map)](const BackwardContext& c) {
                            auto g = c.grad_out();
                            auto gx = c.grad_in(0);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[map[i]] += g[i];
                          });
}

Var transpose(Var a) {
  const std::size_t r = a.rank();
  if (r < 2) throw ShapeError("transpose: rank < 2");
  std::vector<std::size_t> axes(r);
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(a, axes);
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& in = a.shape();
  if (axis >= in.size() || begin >= end || end > in[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + shape_str(in));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t len = end - begin;
  Shape out = in;
  out[axis] = len;
  auto x = a.value();
  std::vector<Real> y(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.begin() + (o * in[axis] + begin) * inner, len * inner,
                y.begin() + o * len * inner);
  }
  const std::size_t full = in[axis];
  return a.tape()->record("slice", std::move(out), std::move(y), {a},
                          [outer, inner, len, full, begin](const BackwardContext& c) {
                            auto g = c.grad_out();
                            auto gx = c.grad_in(0);
                            for (std::size_t o = 0; o < outer; ++o) {
                              const Real* src = g.data() + o * len * inner;
                              Real* dst = gx.data() + (o * full + begin) * inner;
                              for (std::size_t k = 0; k < len * inner; ++k) dst[k] += src[k];
                            }
                          });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p, "concat");
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
      }
    }
    lens.push_back(s[axis]);
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape out = first;
  out[axis] = total;
  std::vector<Real> y(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto x = parts[p].value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.begin() + o * lens[p] * inner, lens[p] * inner,
                  y.begin() + (o * total + offset) * inner);
    }
    offset += lens[p];
  }
  return parts[0].tape()->record(
      "concat", std::move(out), std::move(y), parts,
      [outer, inner, total, lens](const BackwardContext& c) {
        auto g = c.grad_out();
        std::size_t offset = 0;
        for (std::size_t p = 0; p < lens.size(); ++p) {
          if (c.needs(p)) {
            auto gp = c.grad_in(p);
            for (std::size_t o = 0; o < outer; ++o) {
              const Real* src = g.data() + (o * total + offset) * inner;
              Real* dst = gp.data() + o * lens[p] * inner;
              for (std::size_t k = 0; k < lens[p] * inner; ++k) dst[k] += src[k];
            }
          }
          offset += lens[p];
        }
      });
}

namespace {

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = a[i * k + p];
      if (av == 0.0) continue;
      const Real* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[M,K] += G[M,N] * B[K,N]^T
void gemm_nt(const Real* g, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real* bp = b + p * n;
      Real acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      c[i * k + p] += acc;
    }
  }
}

// C[K,N] += A[M,K]^T * G[M,N]
void gemm_tn(const Real* a, const Real* g, Real* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = a[i * k + p];
      if (av == 0.0) continue;
      Real* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) throw ShapeError("matmul: operands need rank >= 2");
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t kb = sb[sb.size() - 2];
  const std::size_t n = sb.back();
  if (k != kb) {
    throw ShapeError("matmul: inner dims differ " + shape_str(sa) + " x " + shape_str(sb));
  }
  const bool shared = sb.size() == 2;
  if (!shared && (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()))) {
    throw ShapeError("matmul: batch dims differ " + shape_str(sa) + " x " + shape_str(sb));
  }
  const std::size_t batch = a.size() / (m * k);
  Shape out(sa.begin(), sa.end() - 1);
  out.push_back(n);

  auto av = a.value();
  auto bv = b.value();
  std::vector<Real> y(batch * m * n, 0.0);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const Real* bb = bv.data() + (shared ? 0 : bi * k * n);
    gemm_nn(av.data() + bi * m * k, bb, y.data() + bi * m * n, m, k, n);
  }
  return a.tape()->record("matmul", std::move(out), std::move(y), {a, b},
                          [batch, m, k, n, shared](const BackwardContext& c) {
                            auto g = c.grad_out();
                            auto av = c.in(0);
                            auto bv = c.in(1);
                            for (std::size_t bi = 0; bi < batch; ++bi) {
                              const Real* gb = g.data() + bi * m * n;
                              const std::size_t boff = shared ? 0 : bi * k * n;
                              if (c.needs(0)) {
                                gemm_nt(gb, bv.data() + boff, c.grad_in(0).data() + bi * m * k, m,
                                        k, n);
                              }
                              if (c.needs(1)) {
                                gemm_tn(av.data() + bi * m * k, gb, c.grad_in(1).data() + boff, m,
                                        k, n);
                              }
                            }
                          });
}

Var add_bias(Var a, Var bias) {
  require_same_tape(a, bias, "add_bias");
  const std::size_t d = a.shape().back();
  if (bias.rank() != 1 || bias.dim(0) != d) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " vs " + shape_str(a.shape()));
  }
  auto x = a.value();
  auto bv = bias.value();
  std::vector<Real> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + bv[i % d];
  return a.tape()->record("add_bias", a.shape(), std::move(y), {a, bias},
                          [d](const BackwardContext& c) {
                            auto g = c.grad_out();
                            if (c.needs(0)) {
                              auto ga = c.grad_in(0);
                              for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                            }
                            if (c.needs(1)) {
                              auto gb = c.grad_in(1);
                              for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
                            }
                          });
}

Var softmax(Var a) {
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.size() / d;
  auto x = a.value();
  std::vector<Real> y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.data() + r * d;
    Real* yr = y.data() + r * d;
    const Real mx = *std::max_element(xr, xr + d);
    Real s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < d; ++j) yr[j] /= s;
  }
  // Jacobian-vector form: gx = y * (g - <g, y>) per row.
  return a.tape()->record("softmax", a.shape(), std::move(y), {a},
                          [rows, d](const BackwardContext& c) {
                            auto y = c.out();
                            auto g = c.grad_out();
                            auto gx = c.grad_in(0);
                            for (std::size_t r = 0; r < rows; ++r) {
                              const Real* yr = y.data() + r * d;
                              const Real* gr = g.data() + r * d;
                              Real dot = 0.0;
                              for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
                              Real* gxr = gx.data() + r * d;
                              for (std::size_t j = 0; j < d; ++j) gxr[j] += yr[j] * (gr[j] - dot);
                            }
                          });
}

Var layer_norm(Var x, Var gain, Var bias, Real epsilon) {
  require_same_tape(x, gain, "layer_norm");
  require_same_tape(x, bias, "layer_norm");
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: affine size must equal last dim " + std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  auto xv = x.value();
  auto gv = gain.value();
  auto bv = bias.value();
  std::vector<Real> y(xv.size());
  std::vector<Real> xhat(xv.size());
  std::vector<Real> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = xv.data() + r * d;
    Real mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<Real>(d);
    Real var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<Real>(d);
    rstd[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < d; ++j) {
      const Real h = (xr[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      y[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return x.tape()->record(
      "layer_norm", x.shape(), std::move(y), {x, gain, bias},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](const BackwardContext& c) {
        auto g = c.grad_out();
        auto gv = c.in(1);
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* gr = g.data() + r * d;
          const Real* hr = xhat.data() + r * d;
          if (c.needs(1)) {
            auto gg = c.grad_in(1);
            for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
          }
          if (c.needs(2)) {
            auto gb = c.grad_in(2);
            for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
          }
          if (c.needs(0)) {
            Real s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const Real gh = gr[j] * gv[j];
              s1 += gh;
              s2 += gh * hr[j];
            }
            s1 /= static_cast<Real>(d);
            s2 /= static_cast<Real>(d);
            Real* gx = c.grad_in(0).data() + r * d;
            for (std::size_t j = 0; j < d; ++j) {
              gx[j] += rstd[r] * (gr[j] * gv[j] - s1 - hr[j] * s2);
            }
          }
        }
      });
}

Var batch_norm(Var x, Var gain, Var bias, BatchNormStats& stats, NormMode mode, Real momentum,
               Real epsilon) {
  require_same_tape(x, gain, "batch_norm");
  require_same_tape(x, bias, "batch_norm");
  if (x.rank() < 2) throw ShapeError("batch_norm: input needs a channel axis and data");
  const std::size_t ch = x.dim(0);
  const std::size_t n = x.size() / ch;
  if (gain.size() != ch || bias.size() != ch) {
    throw ShapeError("batch_norm: affine size must equal channel count");
  }
  if (stats.running_mean.size() != ch || stats.running_var.size() != ch) {
    throw ShapeError("batch_norm: running statistics have the wrong channel count");
  }
  auto xv = x.value();
  auto gv = gain.value();
  auto bv = bias.value();
  std::vector<Real> mu(ch), rstd(ch);
  if (mode == NormMode::infer) {
    for (std::size_t c = 0; c < ch; ++c) {
      mu[c] = stats.running_mean[c];
      rstd[c] = 1.0 / std::sqrt(stats.running_var[c] + epsilon);
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      const Real* xc = xv.data() + c * n;
      Real m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += xc[i];
      m /= static_cast<Real>(n);
      Real v = 0.0;
      for (std::size_t i = 0; i < n; ++i) v += (xc[i] - m) * (xc[i] - m);
      v /= static_cast<Real>(n);
      mu[c] = m;
      rstd[c] = 1.0 / std::sqrt(v + epsilon);
      stats.running_mean[c] = (1.0 - momentum) * stats.running_mean[c] + momentum * m;
      stats.running_var[c] = (1.0 - momentum) * stats.running_var[c] + momentum * v;
    }
    ++stats.batches_tracked;
  }
  std::vector<Real> y(xv.size());
  std::vector<Real> xhat(xv.size());
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const Real h = (xv[c * n + i] - mu[c]) * rstd[c];
      xhat[c * n + i] = h;
      y[c * n + i] = h * gv[c] + bv[c];
    }
  }
  const bool batch_stats = mode == NormMode::train;
  return x.tape()->record(
      "batch_norm", x.shape(), std::move(y), {x, gain, bias},
      [ch, n, batch_stats, xhat = std::move(xhat), rstd = std::move(rstd)](
          const BackwardContext& c) {
        auto g = c.grad_out();
        auto gv = c.in(1);
        for (std::size_t k = 0; k < ch; ++k) {
          const Real* gk = g.data() + k * n;
          const Real* hk = xhat.data() + k * n;
          Real sg = 0.0, sgh = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            sg += gk[i];
            sgh += gk[i] * hk[i];
          }
          if (c.needs(1)) c.grad_in(1)[k] += sgh;
          if (c.needs(2)) c.grad_in(2)[k] += sg;
          if (c.needs(0)) {
            Real* gx = c.grad_in(0).data() + k * n;
            const Real s = gv[k] * rstd[k];
            if (batch_stats) {
              const Real m1 = sg / static_cast<Real>(n);
              const Real m2 = sgh / static_cast<Real>(n);
              for (std::size_t i = 0; i < n; ++i) gx[i] += s * (gk[i] - m1 - hk[i] * m2);
            } else {
              for (std::size_t i = 0; i < n; ++i) gx[i] += s * gk[i];
            }
          }
        }
      });
}

Var overlap_add(Var frames, std::size_t hop) {
  if (frames.rank() != 2) throw ShapeError("overlap_add: frames must be [T, N]");
  if (hop == 0) throw std::invalid_argument("overlap_add: hop must be positive");
  const std::size_t t = frames.dim(0);
  const std::size_t n = frames.dim(1);
  const std::size_t len = (t - 1) * hop + n;
  auto fv = frames.value();
  std::vector<Real> y(len, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < n; ++j) y[i * hop + j] += fv[i * n + j];
  }
  return frames.tape()->record("overlap_add", {len}, std::move(y), {frames},
                               [t, n, hop](const BackwardContext& c) {
                                 auto g = c.grad_out();
                                 auto gf = c.grad_in(0);
                                 for (std::size_t i = 0; i < t; ++i) {
                                   for (std::size_t j = 0; j < n; ++j) {
                                     gf[i * n + j] += g[i * hop + j];
                                   }
                                 }
                               });
}

}  // namespace ccdn::ad
