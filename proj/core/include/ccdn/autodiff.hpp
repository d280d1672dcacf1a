#pragma once

// Minimal reverse-mode differentiation over dense row-major arrays.
//
// A Tape owns every value produced during one forward pass. Var is a cheap
// handle (tape pointer + node id) and ops append new nodes in topological
// order, so backward() is a single reverse sweep over the node list.

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace ccdn {

using Real = double;
using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::span<const Real> value() const;
  Real item() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// What a backward rule sees: its own output, its inputs and the gradient
// buffers. grad_in(k) is empty when input k does not need a gradient.
class BackwardContext {
 public:
  BackwardContext(const Tape& tape, int node, std::span<const Real> grad_out,
                  std::vector<std::span<Real>>& grad_in)
      : tape_(tape), node_(node), grad_out_(grad_out), grad_in_(grad_in) {}

  std::span<const Real> out() const;
  const Shape& out_shape() const;
  std::span<const Real> in(std::size_t k) const;
  const Shape& in_shape(std::size_t k) const;
  std::span<const Real> grad_out() const { return grad_out_; }
  std::span<Real> grad_in(std::size_t k) const { return grad_in_[k]; }
  bool needs(std::size_t k) const { return !grad_in_[k].empty(); }

 private:
  const Tape& tape_;
  int node_;
  std::span<const Real> grad_out_;
  std::vector<std::span<Real>>& grad_in_;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

struct Node {
  std::string op;
  Shape shape;
  std::vector<Real> value;
  std::vector<int> inputs;
  bool requires_grad = false;
  BackwardFn backward;
};

class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Shape shape, std::vector<Real> value, bool requires_grad);
  Var constant(Shape shape, std::vector<Real> value) {
    return leaf(std::move(shape), std::move(value), false);
  }
  Var scalar(Real v) { return constant({1}, {v}); }

  // Appends an op node. requires_grad is inferred from the inputs.
  Var record(std::string op, Shape shape, std::vector<Real> value,
             std::vector<Var> inputs, BackwardFn backward);

  const Node& node(int id) const;
  std::size_t size() const { return nodes_.size(); }
  bool owns(const Var& v) const;

  // Scans every recorded value for NaN/Inf. On by default in debug builds.
  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

 private:
  std::vector<Node> nodes_;
  bool check_finite_;
};

class Gradients {
 public:
  // Gradient of the loss with respect to a requires_grad leaf. Leaves that
  // the loss does not reach get a zero array.
  const std::vector<Real>& of(const Var& leaf) const;
  bool contains(const Var& leaf) const { return grads_.contains(leaf.id()); }

 private:
  friend Gradients backward(const Var& loss, const Tape& tape);
  std::unordered_map<int, std::vector<Real>> grads_;
};

Gradients backward(const Var& loss, const Tape& tape);

// ---- elementwise ---------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, Real c);
Var add_scalar(Var a, Real c);
// a * s where s holds a single element.
Var mul_scalar(Var a, Var s);
Var square(Var a);
Var exp(Var a);
Var log(Var a);
// Gradient is zero where the result is below 1e-12.
Var sqrt(Var a);
Var abs(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var elu(Var a);
Var cos(Var a);
Var sin(Var a);
// Four-quadrant angle of x + j*y. Gradient is zero where |x + j*y| < 1e-12.
Var atan2(Var y, Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }

// ---- reductions ----------------------------------------------------------
Var sum(Var a);
Var mean(Var a);

// ---- shape ---------------------------------------------------------------
Var reshape(Var a, Shape shape);
Var permute(Var a, const std::vector<std::size_t>& axes);
// Swaps the last two axes.
Var transpose(Var a);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(const std::vector<Var>& parts, std::size_t axis);

// ---- linear algebra ------------------------------------------------------
// a: [..., M, K]. b: [K, N] (shared across the leading batch) or
// [..., K, N] with the same leading dims as a.
Var matmul(Var a, Var b);
// a: [..., D] plus bias [D].
Var add_bias(Var a, Var bias);
// Softmax over the last axis.
Var softmax(Var a);

// ---- normalization -------------------------------------------------------
// Normalizes each row of a [N, D] view over its last axis, then applies a
// per-feature affine map (gain, bias of shape [D]).
Var layer_norm(Var x, Var gain, Var bias, Real epsilon = 1e-5);

struct BatchNormStats {
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  std::size_t batches_tracked = 0;
};

enum class NormMode { train, infer };

// x: [C, ...]. Statistics per channel over every other axis. Train mode uses
// batch statistics and updates `stats` with exponential momentum; infer mode
// uses the running statistics (mean 0, variance 1 before any update).
Var batch_norm(Var x, Var gain, Var bias, BatchNormStats& stats, NormMode mode,
               Real momentum = 0.1, Real epsilon = 1e-5);

// ---- signal --------------------------------------------------------------
// frames: [T, N]. Sums frame t into out[t*hop .. t*hop+N). Output length
// (T-1)*hop + N.
Var overlap_add(Var frames, std::size_t hop);

}  // namespace ad
}  // namespace ccdn
