#pragma once

#include <cstddef>

#include "doconv/errors.hpp"

namespace doconv {

// Fully determines the shapes of a convolution-family layer: kernel spatial
// extents (m, n), channel counts, stride, zero padding, channel groups and the
// depth multiplier of the over-parameterizing depthwise kernel.
struct ConvGeometry {
  std::size_t m = 1, n = 1;
  std::size_t c_in = 1, c_out = 1;
  std::size_t stride = 1, pad = 0;
  std::size_t groups = 1;
  std::size_t d_mul = 1;

  std::size_t spatial() const { return m * n; }
  std::size_t in_per_group() const { return c_in / groups; }
  std::size_t out_per_group() const { return c_out / groups; }

  void validate() const;

  // Output grid extents for an [h, w, c_in] input; throws GeometryError when
  // the grid would be empty.
  std::size_t out_h(std::size_t h) const;
  std::size_t out_w(std::size_t w) const;
};

}  // namespace doconv
