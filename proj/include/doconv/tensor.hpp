#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "doconv/errors.hpp"
#include "doconv/geometry.hpp"

namespace doconv {

// Ordered list of positive extents. A rank-0 shape is a scalar (one element).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t elem_count() const;
  bool operator==(const Shape& other) const { return dims_ == other.dims_; }
  std::string str() const;  // e.g. "[2,3,4]"

 private:
  std::vector<std::size_t> dims_;
};

// Dense multi-dimensional array of doubles, row-major (last axis fastest).
// Library operations treat tensors as immutable values and return new ones;
// mutation is reserved for construction and optimizer updates.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_.elem_count(), 0.0) {}
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor of(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator[](std::size_t flat) { return data_[flat]; }

  // Checked multi-index access.
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j, std::size_t k) const;
  double& at(std::size_t i, std::size_t j, std::size_t k);
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const;
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l);

  bool all_finite() const;
  double max_abs() const;

 private:
  std::size_t offset(std::size_t i, std::size_t j) const;
  std::size_t offset(std::size_t i, std::size_t j, std::size_t k) const;
  std::size_t offset(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const;

  Shape shape_;
  std::vector<double> data_;
};

// Shape metadata change; values keep their flat order. Throws ShapeError on
// element count mismatch.
Tensor reshape(const Tensor& t, Shape new_shape);

// [A,B,C] -> [B,A,C] with result[b,a,c] = t[a,b,c]. 3D only.
Tensor transpose_first_two(const Tensor& t);

// Largest elementwise |a - b|; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

// One patch of shape [(m*n), c_in] per output position, zero padded, with
// in-patch flattening i = m_off * n + n_off. values is [out_h*out_w, m*n, c_in].
struct PatchBatch {
  Tensor values;
  std::size_t out_h = 0, out_w = 0;
};

PatchBatch extract_patches(const Tensor& x, const ConvGeometry& geom);

}  // namespace doconv
