#pragma once

#include "doconv/conv.hpp"
#include "doconv/doconv.hpp"
#include "doconv/tensor.hpp"

namespace doconv {

struct ConvGrads {
  Tensor x;     // same shape as the input feature map
  Tensor w;     // same shape as the kernel
  Tensor bias;  // [c_out]; valid iff has_bias
  bool has_bias = false;
};

// Adjoints of the conventional/grouped convolution:
//   grad_w[o,j,l] = sum_p up[p,o] * patch[p,j,lambda(o,l)]
//   grad_x        = transposed scatter of W weighted by up
ConvGrads conv_backward(const Tensor& x, const ConvKernel& k, const ConvGeometry& geom,
                        const Tensor& upstream, bool want_bias = false);

// Adjoints of the depthwise convolution (output channel c*d_mul+d).
ConvGrads depthwise_backward(const Tensor& x, const DepthwiseKernel& k, const ConvGeometry& geom,
                             const Tensor& upstream, bool want_bias = false);

struct DoConvGrads {
  Tensor x;
  Tensor d_residual;  // same shape as D'; the identity fill is constant, so dD' = dD
  Tensor w;
  Tensor bias;
  bool has_bias = false;
};

// Chain rule through the fold W' = D o W composed with the convolution
// adjoints:
//   dW[o,k,l] = sum_j dW'[o,j,l] * D[j,k,lambda(o,l)]
//   dD[j,k,c] = sum_{o in group(c)} dW'[o,j,l(c)] * W[o,k,l(c)]
// and the analogous contractions for DConv.
DoConvGrads doconv_backward(const DoConvParams& p, const Tensor& x, const Tensor& upstream);

}  // namespace doconv
