#pragma once

// Define-by-run reverse-mode automatic differentiation over dense f64 arrays.
//
// A Value is a cheap handle to a graph node. Every op allocates a new node
// that remembers its parents and a closure that pushes its incoming gradient
// back to them. backward() walks the nodes reachable from a scalar root in
// reverse topological order, visiting each node once.

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "proxlab/tensor.hpp"

namespace proxlab::ad {

struct Node;

class Value {
 public:
  Value();  // scalar constant 0
  explicit Value(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  // Leaf that receives gradients.
  static Value variable(Tensor data);
  // Leaf that never receives gradients.
  static Value constant(Tensor data);
  static Value scalar(double v) { return constant(Tensor::scalar(v)); }

  const Tensor& data() const;
  const Shape& shape() const;
  std::size_t numel() const;
  double item() const;

  // Gradient accumulated by backward(). Zero-filled when nothing flowed here.
  Tensor grad() const;
  bool has_grad() const;
  void zero_grad() const;

  bool requires_grad() const;
  bool detached() const;
  const char* op() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  const char* op = "leaf";
  Tensor data;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool detached = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  // Smallest distance from any input element of this op to a point where the
  // op is not differentiable. Infinity for smooth ops.
  double kink_distance = std::numeric_limits<double>::infinity();

  void accumulate(std::size_t i, double g);
};

// Elementwise arithmetic. Operands must have equal shapes, or one of them must
// hold a single element (scalar broadcast).
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value neg(const Value& a);

Value exp(const Value& a);
// Throws DomainError if any element is <= 0.
Value log(const Value& a);
Value tanh(const Value& a);

// (n x k) * (k x m) -> (n x m).
Value matmul(const Value& a, const Value& b);
// (n x m) + (m) broadcast across rows. The bias add of a dense layer.
Value add_rowwise(const Value& matrix, const Value& row);

Value sum(const Value& a);
Value mean(const Value& a);

// Selects one entry along the last axis for every leading position.
// Input (..., V) with prod(leading) indices -> shape (...).
Value gather(const Value& a, std::span<const std::size_t> index);
Value log_softmax(const Value& a);

// Elementwise min. Ties route the gradient to `a`.
Value minimum(const Value& a, const Value& b);
// Derivative is 1 strictly inside (lo, hi) and 0 elsewhere, boundaries included.
Value clip(const Value& a, double lo, double hi);
// mask[i] != 0 selects a[i], otherwise b[i].
Value where(std::span<const unsigned char> mask, const Value& a, const Value& b);
// Same forward value, no gradient path.
Value detach(const Value& a);

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator/(const Value& a, const Value& b) { return div(a, b); }
inline Value operator-(const Value& a) { return neg(a); }

// Populates grad() on every reachable leaf with requires_grad. Leaf gradients
// accumulate across calls; interior gradients are reset. Root must be scalar.
void backward(const Value& root);

// Smallest kink distance over the differentiable part of the graph under root.
double min_kink_distance(const Value& root);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  // True when the point lies within the exclusion margin of a kink (clip
  // boundary, min crossing, log domain edge). Such points are not scored.
  bool boundary = false;
};

// Compares the analytic gradient of f at x against central differences with
// step h. Relative error per coordinate is |analytic - fd| / max(1, |analytic|).
// Throws NonFiniteError if f produces a non-finite value.
GradCheckResult grad_check(const std::function<Value(const Value&)>& f,
                           const Tensor& x, double h = 1e-6,
                           double boundary_margin = 1e-3);

}  // namespace proxlab::ad
