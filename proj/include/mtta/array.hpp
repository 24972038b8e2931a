#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtta {

// Raised for malformed shapes, mismatched operands and non-finite data.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The non-finite case, split out so callers can recover from diverged numerics.
class NonFiniteError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major block of doubles. Every entry is finite; construction
// rejects NaN/Inf so a diverging computation fails at the op that produced it.
class Array {
 public:
  Array() = default;
  Array(Shape shape, std::vector<double> data);
  explicit Array(Shape shape, double fill = 0.0);

  static Array scalar(double v) { return Array(Shape{1}, std::vector<double>{v}); }
  static Array from(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> data() const { return data_; }
  const std::vector<double>& vec() const { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const;

  // Mutable access for optimizers and accumulators; callers keep entries finite.
  std::span<double> mutable_data() { return data_; }
  double& at(std::size_t i) { return data_.at(i); }

  Array reshaped(Shape shape) const;
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

bool bit_equal(const Array& a, const Array& b);

}  // namespace mtta
