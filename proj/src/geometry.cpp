#include "doconv/geometry.hpp"

#include <string>

namespace doconv {

void ConvGeometry::validate() const {
  if (m == 0 || n == 0 || c_in == 0 || c_out == 0 || d_mul == 0) {
    throw GeometryError("kernel extents, channel counts and d_mul must be >= 1");
  }
  if (stride == 0) throw GeometryError("stride must be >= 1");
  if (groups == 0) throw GeometryError("groups must be >= 1");
  if (c_in % groups != 0 || c_out % groups != 0) {
    throw GeometryError("groups=" + std::to_string(groups) + " must divide c_in=" +
                        std::to_string(c_in) + " and c_out=" + std::to_string(c_out));
  }
}

std::size_t ConvGeometry::out_h(std::size_t h) const {
  if (h + 2 * pad < m) {
    throw GeometryError("input height " + std::to_string(h) + " with pad " + std::to_string(pad) +
                        " is smaller than the kernel (" + std::to_string(m) + ")");
  }
  return (h + 2 * pad - m) / stride + 1;
}

std::size_t ConvGeometry::out_w(std::size_t w) const {
  if (w + 2 * pad < n) {
    throw GeometryError("input width " + std::to_string(w) + " with pad " + std::to_string(pad) +
                        " is smaller than the kernel (" + std::to_string(n) + ")");
  }
  return (w + 2 * pad - n) / stride + 1;
}

}  // namespace doconv
