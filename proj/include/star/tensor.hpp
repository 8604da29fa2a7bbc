#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace star {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Immutable once built: copies and
// reshapes share the same buffer.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double value) { return Tensor({}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_->size(); }

  std::span<const double> data() const { return *data_; }
  const double* ptr() const { return data_->data(); }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  // Same buffer, new extents. Throws DimensionError on numel mismatch.
  Tensor reshaped(Shape shape) const;
  std::vector<double> to_vector() const { return *data_; }

  bool all_finite() const;
  bool same_values(const Tensor& other) const;  // shape and bitwise data

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace star
