#include "proxlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "proxlab/error.hpp"

namespace proxlab {

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (std::size_t d : dims_) n *= d;
  return n;
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ", ";
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), values(shape.numel(), fill) {}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (values.size() != shape.numel()) {
    throw ShapeError("tensor: shape " + shape.to_string() + " needs " +
                     std::to_string(shape.numel()) + " values, got " +
                     std::to_string(values.size()));
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  Shape s{v.size()};
  return Tensor(std::move(s), std::move(v));
}

double Tensor::item() const {
  if (values.size() != 1) {
    throw ShapeError("item: expected one element, shape is " + shape.to_string());
  }
  return values[0];
}

}  // namespace proxlab

namespace proxlab::ad {

namespace {

using NodePtr = std::shared_ptr<Node>;

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + a.to_string() + " vs " +
                   b.to_string());
}

// Creates the output node for an op. Parents are kept only when a gradient
// can flow through them.
NodePtr make_node(const char* op, Tensor data, std::vector<NodePtr> parents) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->data = std::move(data);
  for (const auto& p : parents) {
    if (p->requires_grad) node->requires_grad = true;
  }
  if (node->requires_grad) node->parents = std::move(parents);
  return node;
}

// Output shape of an elementwise binary op under scalar broadcast.
Shape broadcast_shape(const char* op, const Value& a, const Value& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (a.numel() == 1) return b.shape();
  if (b.numel() == 1) return a.shape();
  shape_mismatch(op, a.shape(), b.shape());
}

template <typename Fwd, typename DA, typename DB>
Value binary(const char* op, const Value& a, const Value& b, Fwd fwd, DA da, DB db) {
  Shape out_shape = broadcast_shape(op, a, b);
  const std::size_t n = out_shape.numel();
  const Tensor& x = a.data();
  const Tensor& y = b.data();
  const bool xs = x.numel() == 1 && n != 1;
  const bool ys = y.numel() == 1 && n != 1;

  Tensor out(out_shape);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = fwd(x[xs ? 0 : i], y[ys ? 0 : i]);
  }
  NodePtr node = make_node(op, std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    node->backward_fn = [xs, ys, da, db](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      const std::size_t n = self.data.numel();
      for (std::size_t i = 0; i < n; ++i) {
        const double g = self.grad[i];
        const double xv = pa.data[xs ? 0 : i];
        const double yv = pb.data[ys ? 0 : i];
        if (pa.requires_grad) pa.accumulate(xs ? 0 : i, g * da(xv, yv, self.data[i]));
        if (pb.requires_grad) pb.accumulate(ys ? 0 : i, g * db(xv, yv, self.data[i]));
      }
    };
  }
  return Value(std::move(node));
}

template <typename Fwd, typename D>
Value unary(const char* op, const Value& a, Fwd fwd, D d) {
  const Tensor& x = a.data();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = fwd(x[i]);
  NodePtr node = make_node(op, std::move(out), {a.node()});
  if (node->requires_grad) {
    node->backward_fn = [d](Node& self) {
      Node& p = *self.parents[0];
      for (std::size_t i = 0; i < self.data.numel(); ++i) {
        p.accumulate(i, self.grad[i] * d(p.data[i], self.data[i]));
      }
    };
  }
  return Value(std::move(node));
}

}  // namespace

void Node::accumulate(std::size_t i, double g) {
  if (!requires_grad) return;
  if (grad.empty()) grad.assign(data.numel(), 0.0);
  grad[i] += g;
}

Value::Value() : Value(constant(Tensor::scalar(0.0))) {}

Value Value::variable(Tensor data) {
  auto node = std::make_shared<Node>();
  node->data = std::move(data);
  node->requires_grad = true;
  return Value(std::move(node));
}

Value Value::constant(Tensor data) {
  auto node = std::make_shared<Node>();
  node->data = std::move(data);
  return Value(std::move(node));
}

const Tensor& Value::data() const { return node_->data; }
const Shape& Value::shape() const { return node_->data.shape; }
std::size_t Value::numel() const { return node_->data.numel(); }
double Value::item() const { return node_->data.item(); }

Tensor Value::grad() const {
  if (node_->grad.empty()) return Tensor(node_->data.shape, 0.0);
  return Tensor(node_->data.shape, node_->grad);
}

bool Value::has_grad() const { return !node_->grad.empty(); }
void Value::zero_grad() const { node_->grad.clear(); }
bool Value::requires_grad() const { return node_->requires_grad; }
bool Value::detached() const { return node_->detached; }
const char* Value::op() const { return node_->op; }

Value add(const Value& a, const Value& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Value sub(const Value& a, const Value& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Value mul(const Value& a, const Value& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Value div(const Value& a, const Value& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Value neg(const Value& a) {
  return unary(
      "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Value exp(const Value& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Value log(const Value& a) {
  double edge = kInf;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = a.data()[i];
    if (!(x > 0.0)) {
      throw DomainError("log: non-positive input " + std::to_string(x) + " at index " +
                        std::to_string(i));
    }
    edge = std::min(edge, x);
  }
  Value out = unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
  out.node()->kink_distance = edge;
  return out;
}

Value tanh(const Value& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Value matmul(const Value& a, const Value& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() != 2 || sb.rank() != 2 || sa[1] != sb[0]) shape_mismatch("matmul", sa, sb);
  const std::size_t n = sa[0], k = sa[1], m = sb[1];
  const auto& x = a.data().values;
  const auto& y = b.data().values;

  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &out.values[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      if (xv == 0.0) continue;
      const double* yrow = &y[p * m];
      for (std::size_t j = 0; j < m; ++j) row[j] += xv * yrow[j];
    }
  }
  NodePtr node = make_node("matmul", std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    node->backward_fn = [n, k, m](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      const auto& g = self.grad;
      if (pa.requires_grad) {
        if (pa.grad.empty()) pa.grad.assign(n * k, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * pb.data.values[p * m + j];
            pa.grad[i * k + p] += acc;
          }
        }
      }
      if (pb.requires_grad) {
        if (pb.grad.empty()) pb.grad.assign(k * m, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double xv = pa.data.values[i * k + p];
            if (xv == 0.0) continue;
            double* grow = &pb.grad[p * m];
            for (std::size_t j = 0; j < m; ++j) grow[j] += xv * g[i * m + j];
          }
        }
      }
    };
  }
  return Value(std::move(node));
}

Value add_rowwise(const Value& matrix, const Value& row) {
  const Shape& sm = matrix.shape();
  const Shape& sr = row.shape();
  if (sm.rank() != 2 || sr.rank() != 1 || sm[1] != sr[0]) shape_mismatch("add_rowwise", sm, sr);
  const std::size_t n = sm[0], m = sm[1];
  Tensor out(sm);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      out[i * m + j] = matrix.data()[i * m + j] + row.data()[j];
    }
  }
  NodePtr node = make_node("add_rowwise", std::move(out), {matrix.node(), row.node()});
  if (node->requires_grad) {
    node->backward_fn = [n, m](Node& self) {
      Node& pm = *self.parents[0];
      Node& pr = *self.parents[1];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          const double g = self.grad[i * m + j];
          pm.accumulate(i * m + j, g);
          pr.accumulate(j, g);
        }
      }
    };
  }
  return Value(std::move(node));
}

Value sum(const Value& a) {
  double s = 0.0;
  for (double v : a.data().values) s += v;
  NodePtr node = make_node("sum", Tensor::scalar(s), {a.node()});
  if (node->requires_grad) {
    node->backward_fn = [](Node& self) {
      Node& p = *self.parents[0];
      for (std::size_t i = 0; i < p.data.numel(); ++i) p.accumulate(i, self.grad[0]);
    };
  }
  return Value(std::move(node));
}

Value mean(const Value& a) {
  const std::size_t n = a.numel();
  if (n == 0) throw ShapeError("mean: empty input");
  double s = 0.0;
  for (double v : a.data().values) s += v;
  const double inv = 1.0 / static_cast<double>(n);
  NodePtr node = make_node("mean", Tensor::scalar(s * inv), {a.node()});
  if (node->requires_grad) {
    node->backward_fn = [inv](Node& self) {
      Node& p = *self.parents[0];
      for (std::size_t i = 0; i < p.data.numel(); ++i) p.accumulate(i, self.grad[0] * inv);
    };
  }
  return Value(std::move(node));
}

Value gather(const Value& a, std::span<const std::size_t> index) {
  const Shape& s = a.shape();
  if (s.rank() == 0) throw ShapeError("gather: input must have at least one axis");
  const std::size_t last = s[s.rank() - 1];
  const std::size_t rows = last == 0 ? 0 : a.numel() / last;
  if (index.size() != rows) {
    throw ShapeError("gather: " + std::to_string(index.size()) + " indices for input of shape " +
                     s.to_string());
  }
  std::vector<std::size_t> out_dims(s.dims().begin(), s.dims().end() - 1);
  Tensor out{Shape(out_dims)};
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= last) {
      throw ShapeError("gather: index " + std::to_string(index[r]) + " out of range for axis of " +
                       std::to_string(last));
    }
    out[r] = a.data()[r * last + index[r]];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  NodePtr node = make_node("gather", std::move(out), {a.node()});
  if (node->requires_grad) {
    node->backward_fn = [idx = std::move(idx), last](Node& self) {
      Node& p = *self.parents[0];
      for (std::size_t r = 0; r < idx.size(); ++r) p.accumulate(r * last + idx[r], self.grad[r]);
    };
  }
  return Value(std::move(node));
}

Value log_softmax(const Value& a) {
  const Shape& s = a.shape();
  if (s.rank() == 0) throw ShapeError("log_softmax: input must have at least one axis");
  const std::size_t last = s[s.rank() - 1];
  const std::size_t rows = last == 0 ? 0 : a.numel() / last;
  Tensor out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &a.data().values[r * last];
    double mx = x[0];
    for (std::size_t j = 1; j < last; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < last; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < last; ++j) out[r * last + j] = x[j] - lse;
  }
  NodePtr node = make_node("log_softmax", std::move(out), {a.node()});
  if (node->requires_grad) {
    node->backward_fn = [rows, last](Node& self) {
      Node& p = *self.parents[0];
      for (std::size_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < last; ++j) gsum += self.grad[r * last + j];
        for (std::size_t j = 0; j < last; ++j) {
          const std::size_t i = r * last + j;
          p.accumulate(i, self.grad[i] - std::exp(self.data[i]) * gsum);
        }
      }
    };
  }
  return Value(std::move(node));
}

Value minimum(const Value& a, const Value& b) {
  Shape out_shape = broadcast_shape("minimum", a, b);
  const std::size_t n = out_shape.numel();
  const Tensor& x = a.data();
  const Tensor& y = b.data();
  const bool xs = x.numel() == 1 && n != 1;
  const bool ys = y.numel() == 1 && n != 1;
  Tensor out(out_shape);
  std::vector<unsigned char> take_a(n);
  double kink = kInf;
  for (std::size_t i = 0; i < n; ++i) {
    const double xv = x[xs ? 0 : i];
    const double yv = y[ys ? 0 : i];
    take_a[i] = xv <= yv;
    out[i] = take_a[i] ? xv : yv;
    // Exact ties are resolved toward `a`; only genuine crossings count.
    if (xv != yv) kink = std::min(kink, std::abs(xv - yv));
  }
  NodePtr node = make_node("minimum", std::move(out), {a.node(), b.node()});
  node->kink_distance = kink;
  if (node->requires_grad) {
    node->backward_fn = [xs, ys, take_a = std::move(take_a)](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      for (std::size_t i = 0; i < take_a.size(); ++i) {
        if (take_a[i]) {
          pa.accumulate(xs ? 0 : i, self.grad[i]);
        } else {
          pb.accumulate(ys ? 0 : i, self.grad[i]);
        }
      }
    };
  }
  return Value(std::move(node));
}

Value clip(const Value& a, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clip: lo must not exceed hi");
  double kink = kInf;
  for (double v : a.data().values) kink = std::min({kink, std::abs(v - lo), std::abs(v - hi)});
  Value out = unary(
      "clip", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
  out.node()->kink_distance = kink;
  return out;
}

Value where(std::span<const unsigned char> mask, const Value& a, const Value& b) {
  if (!(a.shape() == b.shape())) shape_mismatch("where", a.shape(), b.shape());
  if (mask.size() != a.numel()) {
    throw ShapeError("where: mask of " + std::to_string(mask.size()) +
                     " elements for operands of shape " + a.shape().to_string());
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? a.data()[i] : b.data()[i];
  std::vector<unsigned char> m(mask.begin(), mask.end());
  NodePtr node = make_node("where", std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    node->backward_fn = [m = std::move(m)](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i]) {
          pa.accumulate(i, self.grad[i]);
        } else {
          pb.accumulate(i, self.grad[i]);
        }
      }
    };
  }
  return Value(std::move(node));
}

Value detach(const Value& a) {
  auto node = std::make_shared<Node>();
  node->op = "detach";
  node->data = a.data();
  node->detached = true;
  return Value(std::move(node));
}

namespace {

// Post-order over nodes that carry gradient; parents precede children.
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Value& root) {
  if (root.numel() != 1) {
    throw ShapeError("backward: root must be scalar, shape is " + root.shape().to_string());
  }
  Node* r = root.node().get();
  if (!r->requires_grad) return;
  std::vector<Node*> order = topo_order(r);
  for (Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->data.numel(), 0.0);
  }
  r->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

double min_kink_distance(const Value& root) {
  double d = root.node()->kink_distance;
  if (!root.requires_grad()) return d;
  for (Node* n : topo_order(root.node().get())) d = std::min(d, n->kink_distance);
  return d;
}

GradCheckResult grad_check(const std::function<Value(const Value&)>& f, const Tensor& x,
                           double h, double boundary_margin) {
  if (!(h > 0.0)) throw DomainError("grad_check: step must be positive");
  auto evaluate = [&](const Tensor& at) {
    Value v = f(Value::constant(at));
    if (v.numel() != 1) throw ShapeError("grad_check: f must return a scalar");
    const double y = v.item();
    if (!std::isfinite(y)) throw NonFiniteError("grad_check: f is not finite", {});
    return y;
  };

  Value leaf = Value::variable(x);
  Value out = f(leaf);
  if (out.numel() != 1) throw ShapeError("grad_check: f must return a scalar");
  if (!std::isfinite(out.item())) throw NonFiniteError("grad_check: f is not finite", {});

  GradCheckResult result;
  if (min_kink_distance(out) < boundary_margin) {
    result.boundary = true;
    return result;
  }
  backward(out);
  const Tensor analytic = leaf.grad();

  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + h;
    const double up = evaluate(probe);
    probe[i] = x[i] - h;
    const double down = evaluate(probe);
    probe[i] = x[i];
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    if (i == 0 || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace proxlab::ad
