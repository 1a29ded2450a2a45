#pragma once

#include "doconv/geometry.hpp"
#include "doconv/tensor.hpp"

namespace doconv {

// Conventional convolution kernel, weights [c_out, (m*n), c_in/groups].
struct ConvKernel {
  Tensor weights;
  static ConvKernel make(Tensor weights, const ConvGeometry& geom);
};

// Depthwise convolution kernel, weights [(m*n), d_mul, c_in].
struct DepthwiseKernel {
  Tensor weights;
  static DepthwiseKernel make(Tensor weights, const ConvGeometry& geom);
};

// O_c = sum_i W_{c,i} P_i over i in (m*n) x c_in, per patch. groups must be 1.
// bias, when given, is [c_out] and is added after the sum.
Tensor conv_forward(const Tensor& x, const ConvKernel& k, const ConvGeometry& geom,
                    const Tensor* bias = nullptr);

// O_{d,c} = sum_i W_{i,d,c} P_{i,c}, i in m*n. Output channel index c*d_mul+d,
// so all multipliers of one input channel are contiguous.
Tensor depthwise_forward(const Tensor& x, const DepthwiseKernel& k, const ConvGeometry& geom,
                         const Tensor* bias = nullptr);

// Input/output channels split into `groups` contiguous blocks; each group runs
// an independent conventional convolution over its own slice.
Tensor grouped_conv_forward(const Tensor& x, const ConvKernel& k, const ConvGeometry& geom,
                            const Tensor* bias = nullptr);

}  // namespace doconv
