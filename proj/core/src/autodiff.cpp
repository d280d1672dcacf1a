#include "ccdn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ccdn {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace ad {

#ifdef NDEBUG
constexpr bool kCheckFiniteDefault = false;
#else
constexpr bool kCheckFiniteDefault = true;
#endif

const Shape& Var::shape() const { return tape_->node(id_).shape; }
std::size_t Var::size() const { return tape_->node(id_).value.size(); }
std::span<const Real> Var::value() const { return tape_->node(id_).value; }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Real Var::item() const {
  const auto& v = tape_->node(id_).value;
  if (v.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return v[0];
}

std::span<const Real> BackwardContext::out() const { return tape_.node(node_).value; }
const Shape& BackwardContext::out_shape() const { return tape_.node(node_).shape; }

std::span<const Real> BackwardContext::in(std::size_t k) const {
  return tape_.node(tape_.node(node_).inputs.at(k)).value;
}

const Shape& BackwardContext::in_shape(std::size_t k) const {
  return tape_.node(tape_.node(node_).inputs.at(k)).shape;
}

Tape::Tape() : check_finite_(kCheckFiniteDefault) { nodes_.reserve(1024); }

Var Tape::leaf(Shape shape, std::vector<Real> value, bool requires_grad) {
  if (numel(shape) != value.size() || shape.empty()) {
    throw ShapeError("leaf: shape " + shape_str(shape) + " does not hold " +
                     std::to_string(value.size()) + " values");
  }
  for (auto d : shape) {
    if (d == 0) throw ShapeError("leaf: zero-sized dimension in " + shape_str(shape));
  }
  Node n;
  n.op = "leaf";
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(std::string op, Shape shape, std::vector<Real> value,
                 std::vector<Var> inputs, BackwardFn backward) {
  if (numel(shape) != value.size()) {
    throw ShapeError(op + ": output shape " + shape_str(shape) + " does not hold " +
                     std::to_string(value.size()) + " values");
  }
  Node n;
  n.op = std::move(op);
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (!owns(in)) throw std::invalid_argument(n.op + ": input belongs to another tape");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (check_finite_) {
    for (Real v : n.value) {
      if (!std::isfinite(v)) throw NonFiniteError(n.op + ": produced a non-finite value");
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Node& Tape::node(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw std::out_of_range("tape: dangling tensor id " + std::to_string(id));
  }
  return nodes_[id];
}

bool Tape::owns(const Var& v) const {
  return v.tape() == this && v.id() >= 0 && static_cast<std::size_t>(v.id()) < nodes_.size();
}

const std::vector<Real>& Gradients::of(const Var& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) {
    throw std::invalid_argument("gradients: tensor " + std::to_string(leaf.id()) +
                                " is not a requires_grad leaf");
  }
  return it->second;
}

Gradients backward(const Var& loss, const Tape& tape) {
  if (!tape.owns(loss)) {
    throw std::invalid_argument("backward: loss id " + std::to_string(loss.id()) +
                                " is not on this tape");
  }
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  }

  const int n_nodes = static_cast<int>(tape.size());
  std::vector<std::vector<Real>> grads(n_nodes);
  auto ensure = [&](int id) -> std::vector<Real>& {
    auto& g = grads[id];
    if (g.empty()) g.assign(tape.node(id).value.size(), 0.0);
    return g;
  };

  if (tape.node(loss.id()).requires_grad) ensure(loss.id())[0] = 1.0;

  std::vector<std::span<Real>> grad_in;
  for (int id = loss.id(); id >= 0; --id) {
    const Node& node = tape.node(id);
    if (!node.requires_grad || !node.backward || grads[id].empty()) continue;
    grad_in.clear();
    for (int in : node.inputs) {
      if (tape.node(in).requires_grad) {
        grad_in.emplace_back(ensure(in));
      } else {
        grad_in.emplace_back();
      }
    }
    BackwardContext ctx(tape, id, grads[id], grad_in);
    node.backward(ctx);
    // Interior gradients are not needed once propagated.
    if (!node.inputs.empty()) std::vector<Real>().swap(grads[id]);
  }

  Gradients out;
  for (int id = 0; id < n_nodes; ++id) {
    const Node& node = tape.node(id);
    if (!node.inputs.empty() || !node.requires_grad) continue;
    if (grads[id].empty()) grads[id].assign(node.value.size(), 0.0);
    out.grads_.emplace(id, std::move(grads[id]));
  }
  return out;
}

}  // namespace ad
}  // namespace ccdn
