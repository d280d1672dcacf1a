#include <algorithm>
#include <cstdint>

#include "ccdn/layers.hpp"

namespace ccdn::layers {
namespace {

// Geometry of a plain (forward) 2-D cross-correlation:
//   y[co, oh, ow] = sum w[co, ci, kh, kw] * x[ci, oh*sh - ph + kh*dh, ow*sw - pw + kw*dw]
// 1-D convs use h = oh = kh = 1.
struct Geometry {
  std::size_t ci, co;
  std::size_t h, w, oh, ow;
  std::size_t kh, kw, sh, sw, dh, dw;
  std::ptrdiff_t ph, pw;
};

// Output positions o in [lo, hi) with 0 <= o*s + off < n.
struct Range {
  std::size_t lo, hi;
};

Range valid_range(std::ptrdiff_t off, std::size_t s, std::size_t n, std::size_t on) {
  const auto ss = static_cast<std::ptrdiff_t>(s);
  std::ptrdiff_t lo = off >= 0 ? 0 : (-off + ss - 1) / ss;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(n) - 1 - off;
  std::ptrdiff_t hi = last < 0 ? 0 : last / ss + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(on));
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename Body>
void for_each_tap(const Geometry& g, Body body) {
  for (std::size_t kh = 0; kh < g.kh; ++kh) {
    const std::ptrdiff_t off_h = static_cast<std::ptrdiff_t>(kh * g.dh) - g.ph;
    const Range rh = valid_range(off_h, g.sh, g.h, g.oh);
    if (rh.lo >= rh.hi) continue;
    for (std::size_t kw = 0; kw < g.kw; ++kw) {
      const std::ptrdiff_t off_w = static_cast<std::ptrdiff_t>(kw * g.dw) - g.pw;
      const Range rw = valid_range(off_w, g.sw, g.w, g.ow);
      if (rw.lo >= rw.hi) continue;
      body(kh, kw, rh, rw, off_h, off_w);
    }
  }
}

void conv_forward(const Geometry& g, const Real* x, const Real* wt, Real* y) {
  for (std::size_t co = 0; co < g.co; ++co) {
    Real* yc = y + co * g.oh * g.ow;
    for (std::size_t ci = 0; ci < g.ci; ++ci) {
      const Real* xc = x + ci * g.h * g.w;
      const Real* wc = wt + (co * g.ci + ci) * g.kh * g.kw;
      for_each_tap(g, [&](std::size_t kh, std::size_t kw, Range rh, Range rw,
                          std::ptrdiff_t off_h, std::ptrdiff_t off_w) {
        const Real wv = wc[kh * g.kw + kw];
        if (wv == 0.0) return;
        for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
          const Real* xr = xc + (oh * g.sh + off_h) * g.w;
          Real* yr = yc + oh * g.ow;
          if (g.sw == 1) {
            const Real* xs = xr + off_w;
            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) yr[ow] += wv * xs[ow];
          } else {
            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) yr[ow] += wv * xr[ow * g.sw + off_w];
          }
        }
      });
    }
  }
}

// Adjoint of conv_forward with respect to x.
void conv_backward_data(const Geometry& g, const Real* gy, const Real* wt, Real* gx) {
  for (std::size_t co = 0; co < g.co; ++co) {
    const Real* gc = gy + co * g.oh * g.ow;
    for (std::size_t ci = 0; ci < g.ci; ++ci) {
      Real* xc = gx + ci * g.h * g.w;
      const Real* wc = wt + (co * g.ci + ci) * g.kh * g.kw;
      for_each_tap(g, [&](std::size_t kh, std::size_t kw, Range rh, Range rw,
                          std::ptrdiff_t off_h, std::ptrdiff_t off_w) {
        const Real wv = wc[kh * g.kw + kw];
        if (wv == 0.0) return;
        for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
          Real* xr = xc + (oh * g.sh + off_h) * g.w;
          const Real* gr = gc + oh * g.ow;
          if (g.sw == 1) {
            Real* xs = xr + off_w;
            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) xs[ow] += wv * gr[ow];
          } else {
            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) xr[ow * g.sw + off_w] += wv * gr[ow];
          }
        }
      });
    }
  }
}

// Adjoint of conv_forward with respect to the weights.
void conv_backward_weight(const Geometry& g, const Real* gy, const Real* x, Real* gw) {
  for (std::size_t co = 0; co < g.co; ++co) {
    const Real* gc = gy + co * g.oh * g.ow;
    for (std::size_t ci = 0; ci < g.ci; ++ci) {
      const Real* xc = x + ci * g.h * g.w;
      Real* wc = gw + (co * g.ci + ci) * g.kh * g.kw;
      for_each_tap(g, [&](std::size_t kh, std::size_t kw, Range rh, Range rw,
                          std::ptrdiff_t off_h, std::ptrdiff_t off_w) {
        Real acc = 0.0;
        for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
          const Real* xr = xc + (oh * g.sh + off_h) * g.w;
          const Real* gr = gc + oh * g.ow;
          if (g.sw == 1) {
            const Real* xs = xr + off_w;
            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) acc += gr[ow] * xs[ow];
          } else {
            for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) acc += gr[ow] * xr[ow * g.sw + off_w];
          }
        }
        wc[kh * g.kw + kw] += acc;
      });
    }
  }
}

std::size_t forward_out(std::size_t n, std::size_t k, std::size_t s, std::size_t d,
                        std::size_t p) {
  const std::size_t extent = d * (k - 1) + 1;
  if (n + 2 * p < extent) return 0;
  return (n + 2 * p - extent) / s + 1;
}

std::size_t transposed_out(std::size_t n, std::size_t k, std::size_t s, std::size_t d,
                           std::size_t p, std::size_t op) {
  const std::ptrdiff_t v = static_cast<std::ptrdiff_t>((n - 1) * s + d * (k - 1) + 1 + op) -
                           static_cast<std::ptrdiff_t>(2 * p);
  return v > 0 ? static_cast<std::size_t>(v) : 0;
}

// Forward-conv geometry for spec applied to an input of `in` shape. For a
// transposed spec the roles are swapped: the geometry describes the plain
// conv mapping the transposed output back onto its input.
Geometry geometry(const ConvSpec& spec, const Shape& in, const Shape& out) {
  Geometry g{};
  const bool two = spec.dims == 2;
  const Shape& big = spec.transposed ? out : in;
  const Shape& small = spec.transposed ? in : out;
  g.ci = spec.transposed ? spec.out_channels : spec.in_channels;
  g.co = spec.transposed ? spec.in_channels : spec.out_channels;
  g.h = two ? big[1] : 1;
  g.w = two ? big[2] : big[1];
  g.oh = two ? small[1] : 1;
  g.ow = two ? small[2] : small[1];
  g.kh = two ? spec.kernel[0] : 1;
  g.kw = two ? spec.kernel[1] : spec.kernel[0];
  g.sh = two ? spec.stride[0] : 1;
  g.sw = two ? spec.stride[1] : spec.stride[0];
  g.dh = two ? spec.dilation[0] : 1;
  g.dw = two ? spec.dilation[1] : spec.dilation[0];
  g.ph = static_cast<std::ptrdiff_t>(two ? spec.padding[0] : 0);
  g.pw = static_cast<std::ptrdiff_t>(two ? spec.padding[1] : spec.padding[0]);
  return g;
}

}  // namespace

ConvSpec ConvSpec::conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                          std::size_t dilation, std::size_t padding) {
  ConvSpec s;
  s.dims = 1;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = {kernel, 1};
  s.stride = {stride, 1};
  s.dilation = {dilation, 1};
  s.padding = {padding, 0};
  s.validate();
  return s;
}

ConvSpec ConvSpec::conv2d(std::size_t in, std::size_t out, std::array<std::size_t, 2> kernel,
                          std::array<std::size_t, 2> stride, std::array<std::size_t, 2> padding,
                          std::array<std::size_t, 2> dilation) {
  ConvSpec s;
  s.dims = 2;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  s.dilation = dilation;
  s.validate();
  return s;
}

void ConvSpec::validate() const {
  if (dims != 1 && dims != 2) throw ShapeError("conv: dims must be 1 or 2");
  if (in_channels == 0 || out_channels == 0) throw ShapeError("conv: zero channels");
  for (int i = 0; i < dims; ++i) {
    if (kernel[i] == 0 || stride[i] == 0 || dilation[i] == 0) {
      throw ShapeError("conv: kernel, stride and dilation must be positive");
    }
    if (output_padding[i] >= std::max(stride[i], dilation[i])) {
      throw ShapeError("conv: output_padding must be smaller than stride or dilation");
    }
    if (!transposed && output_padding[i] != 0) {
      throw ShapeError("conv: output_padding only applies to transposed convs");
    }
  }
}

ConvSpec ConvSpec::inverse(const std::vector<std::size_t>& input_spatial) const {
  if (transposed) throw ShapeError("conv: inverse() of a transposed spec");
  if (input_spatial.size() != static_cast<std::size_t>(dims)) {
    throw ShapeError("conv: inverse() spatial rank mismatch");
  }
  ConvSpec t = *this;
  t.transposed = true;
  t.in_channels = out_channels;
  t.out_channels = in_channels;
  for (int i = 0; i < dims; ++i) {
    const std::size_t n = input_spatial[i];
    const std::size_t o = forward_out(n, kernel[i], stride[i], dilation[i], padding[i]);
    if (o == 0) throw ShapeError("conv: inverse() of a conv with empty output");
    const std::size_t back = transposed_out(o, kernel[i], stride[i], dilation[i], padding[i], 0);
    if (back > n || n - back >= std::max(stride[i], dilation[i])) {
      throw ShapeError("conv: no transposed conv restores size " + std::to_string(n));
    }
    t.output_padding[i] = n - back;
  }
  t.validate();
  return t;
}

Shape ConvSpec::weight_shape() const {
  const std::size_t first = transposed ? in_channels : out_channels;
  const std::size_t second = transposed ? out_channels : in_channels;
  if (dims == 1) return {first, second, kernel[0]};
  return {first, second, kernel[0], kernel[1]};
}

std::size_t ConvSpec::fan_in() const {
  std::size_t k = in_channels;
  for (int i = 0; i < dims; ++i) k *= kernel[i];
  return k;
}

Shape ConvSpec::output_shape(const Shape& input) const {
  validate();
  if (input.size() != static_cast<std::size_t>(dims) + 1) {
    throw ShapeError("conv: expected rank " + std::to_string(dims + 1) + " input, got " +
                     shape_str(input));
  }
  if (input[0] != in_channels) {
    throw ShapeError("conv: input has " + std::to_string(input[0]) + " channels, spec expects " +
                     std::to_string(in_channels));
  }
  Shape out{out_channels};
  for (int i = 0; i < dims; ++i) {
    const std::size_t n = input[i + 1];
    const std::size_t o =
        transposed ? transposed_out(n, kernel[i], stride[i], dilation[i], padding[i],
                                    output_padding[i])
                   : forward_out(n, kernel[i], stride[i], dilation[i], padding[i]);
    if (o == 0) throw ShapeError("conv: empty output for input " + shape_str(input));
    out.push_back(o);
  }
  if (transposed) {
    // The matching forward conv must map the output back onto the input.
    for (int i = 0; i < dims; ++i) {
      if (forward_out(out[i + 1], kernel[i], stride[i], dilation[i], padding[i]) != input[i + 1]) {
        throw ShapeError("conv: transposed geometry is not invertible for " + shape_str(input));
      }
    }
  }
  return out;
}

ad::Var conv(ad::Var x, ad::Var weight, ad::Var bias, const ConvSpec& spec) {
  Shape out_shape = spec.output_shape(x.shape());
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv: weight " + shape_str(weight.shape()) + " vs expected " +
                     shape_str(spec.weight_shape()));
  }
  const bool has_bias = bias.valid();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != spec.out_channels)) {
    throw ShapeError("conv: bias must be [out_channels]");
  }
  const Geometry g = geometry(spec, x.shape(), out_shape);
  const std::size_t plane = numel(out_shape) / spec.out_channels;

  std::vector<Real> y(numel(out_shape), 0.0);
  if (has_bias) {
    auto b = bias.value();
    for (std::size_t c = 0; c < spec.out_channels; ++c) {
      std::fill_n(y.begin() + c * plane, plane, b[c]);
    }
  }
  if (spec.transposed) {
    conv_backward_data(g, x.value().data(), weight.value().data(), y.data());
  } else {
    conv_forward(g, x.value().data(), weight.value().data(), y.data());
  }

  std::vector<ad::Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  const bool transposed = spec.transposed;
  const std::size_t out_channels = spec.out_channels;
  return x.tape()->record(
      transposed ? "conv_transpose" : "conv", std::move(out_shape), std::move(y),
      std::move(inputs),
      [g, transposed, has_bias, out_channels, plane](const ad::BackwardContext& c) {
        auto gy = c.grad_out();
        auto xv = c.in(0);
        auto wv = c.in(1);
        if (c.needs(0)) {
          if (transposed) {
            conv_forward(g, gy.data(), wv.data(), c.grad_in(0).data());
          } else {
            conv_backward_data(g, gy.data(), wv.data(), c.grad_in(0).data());
          }
        }
        if (c.needs(1)) {
          if (transposed) {
            conv_backward_weight(g, xv.data(), gy.data(), c.grad_in(1).data());
          } else {
            conv_backward_weight(g, gy.data(), xv.data(), c.grad_in(1).data());
          }
        }
        if (has_bias && c.needs(2)) {
          auto gb = c.grad_in(2);
          for (std::size_t k = 0; k < out_channels; ++k) {
            Real acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += gy[k * plane + i];
            gb[k] += acc;
          }
        }
      });
}

}  // namespace ccdn::layers
