#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace proxlab {

// Ordered list of extents. An empty dims list denotes a scalar (one element).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {}

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t numel() const;
  bool is_scalar() const { return numel() == 1; }

  std::string to_string() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
};

// Dense row-major f64 array.
struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() : values(1, 0.0) {}
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> v);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v);

  std::size_t numel() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double item() const;
};

}  // namespace proxlab
