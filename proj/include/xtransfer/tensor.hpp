#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace xtransfer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major tensor of doubles. All numerical work in the library runs
// through this type; float32 only appears at serialization boundaries.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // Same storage, new shape; element counts must agree.
  Tensor reshaped(Shape shape) const;
  void fill(double v);

  // Slice of the leading axis: rows [begin, end).
  Tensor rows(std::size_t begin, std::size_t end) const;

  double max_abs() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// Concatenate along a new leading axis. All parts must share a shape.
Tensor stack(std::span<const Tensor> parts);

}  // namespace xtransfer
