#include "doconv/tensor.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

namespace doconv {

namespace {

std::string count_mismatch(const Shape& from, const Shape& to) {
  std::ostringstream os;
  os << "reshape: element count mismatch: " << from.str() << " (" << from.elem_count() << ") -> "
     << to.str() << " (" << to.elem_count() << ")";
  return os.str();
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {
  for (std::size_t d : dims_) {
    if (d == 0) throw ShapeError("shape extents must be >= 1, got " + str());
  }
}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  for (std::size_t d : dims_) {
    if (d == 0) throw ShapeError("shape extents must be >= 1, got " + str());
  }
}

std::size_t Shape::elem_count() const {
  std::size_t n = 1;
  for (std::size_t d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ',';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_.elem_count()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.data_) v = value;
  return t;
}

Tensor Tensor::of(Shape shape, std::initializer_list<double> values) {
  return Tensor(std::move(shape), std::vector<double>(values));
}

std::size_t Tensor::offset(std::size_t i, std::size_t j) const {
  if (shape_.rank() != 2 || i >= shape_[0] || j >= shape_[1]) {
    throw ShapeError("2D index out of range for shape " + shape_.str());
  }
  return i * shape_[1] + j;
}

std::size_t Tensor::offset(std::size_t i, std::size_t j, std::size_t k) const {
  if (shape_.rank() != 3 || i >= shape_[0] || j >= shape_[1] || k >= shape_[2]) {
    throw ShapeError("3D index out of range for shape " + shape_.str());
  }
  return (i * shape_[1] + j) * shape_[2] + k;
}

std::size_t Tensor::offset(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
  if (shape_.rank() != 4 || i >= shape_[0] || j >= shape_[1] || k >= shape_[2] || l >= shape_[3]) {
    throw ShapeError("4D index out of range for shape " + shape_.str());
  }
  return ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
}

double Tensor::at(std::size_t i, std::size_t j) const { return data_[offset(i, j)]; }
double& Tensor::at(std::size_t i, std::size_t j) { return data_[offset(i, j)]; }
double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  return data_[offset(i, j, k)];
}
double& Tensor::at(std::size_t i, std::size_t j, std::size_t k) { return data_[offset(i, j, k)]; }
double Tensor::at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
  return data_[offset(i, j, k, l)];
}
double& Tensor::at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
  return data_[offset(i, j, k, l)];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::max_abs() const {
  double m = 0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Tensor reshape(const Tensor& t, Shape new_shape) {
  if (new_shape.elem_count() != t.size()) throw ShapeError(count_mismatch(t.shape(), new_shape));
  return Tensor(std::move(new_shape), t.values());
}

Tensor transpose_first_two(const Tensor& t) {
  if (t.shape().rank() != 3) {
    throw ShapeError("transpose_first_two requires a 3D tensor, got " + t.shape().str());
  }
  const std::size_t a = t.shape()[0], b = t.shape()[1], c = t.shape()[2];
  Tensor out({b, a, c});
  const double* src = t.data();
  double* dst = out.data();
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      for (std::size_t k = 0; k < c; ++k) {
        dst[(j * a + i) * c + k] = src[(i * b + j) * c + k];
      }
    }
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("max_abs_diff: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

PatchBatch extract_patches(const Tensor& x, const ConvGeometry& geom) {
  if (x.shape().rank() != 3) {
    throw ShapeError("extract_patches expects a [h,w,c] feature map, got " + x.shape().str());
  }
  geom.validate();
  const std::size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  if (c != geom.c_in) {
    throw ShapeError("feature map has " + std::to_string(c) + " channels, geometry expects " +
                     std::to_string(geom.c_in));
  }
  const std::size_t oh = geom.out_h(h), ow = geom.out_w(w);
  const std::size_t mn = geom.spatial();

  PatchBatch pb;
  pb.out_h = oh;
  pb.out_w = ow;
  pb.values = Tensor({oh * ow, mn, c});  // zero padding comes for free

  const double* src = x.data();
  double* dst = pb.values.data();
  const auto ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const std::size_t p = oy * ow + ox;
      const auto y0 = static_cast<std::ptrdiff_t>(oy * geom.stride) -
                      static_cast<std::ptrdiff_t>(geom.pad);
      const auto x0 = static_cast<std::ptrdiff_t>(ox * geom.stride) -
                      static_cast<std::ptrdiff_t>(geom.pad);
      for (std::size_t m = 0; m < geom.m; ++m) {
        const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(m);
        if (iy < 0 || iy >= ih) continue;
        for (std::size_t n = 0; n < geom.n; ++n) {
          const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(n);
          if (ix < 0 || ix >= iw) continue;
          const double* row = src + (static_cast<std::size_t>(iy) * w +
                                     static_cast<std::size_t>(ix)) * c;
          double* cell = dst + (p * mn + (m * geom.n + n)) * c;
          for (std::size_t l = 0; l < c; ++l) cell[l] = row[l];
        }
      }
    }
  }
  return pb;
}

}  // namespace doconv
