#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "doconv/conv.hpp"
#include "doconv/geometry.hpp"
#include "doconv/tensor.hpp"

namespace doconv {

enum class DoKind { Conv, DConv, GConv };
enum class Composition { Feature, Kernel };

const char* do_kind_name(DoKind kind);
const char* composition_name(Composition mode);

// Trainable parameter pair of a depthwise over-parameterized layer. The stored
// depthwise kernel is the residual D' = D - I; the effective D is materialized
// as D' + identity_fill at every use, so weight decay acts on D', never on the
// identity diagonal.
//
// Shapes: d_residual [(m*n), d_mul, c_in];
//         w  Conv/GConv [c_out, d_mul, c_in/groups], DConv [d_mul, dw_mul, c_in].
struct DoConvParams {
  DoKind kind = DoKind::Conv;
  ConvGeometry geom;
  Tensor d_residual;
  Tensor w;
  Tensor bias;
  bool has_bias = false;
  bool separable = false;  // explicit opt-in to d_mul < m*n

  // Validates shapes and the over-parameterization condition d_mul >= m*n
  // (unless separable). Pointwise geometries (m*n == 1) are rejected: such a
  // layer has no spatial patch; use a plain convolution instead.
  static DoConvParams create(DoKind kind, const ConvGeometry& geom, Tensor d_residual, Tensor w,
                             bool separable = false);

  DoConvParams with_bias(Tensor b) const;
  std::size_t dw_mul() const;  // DConv only: w.shape()[1]
  Tensor effective_d() const;
  void validate() const;
};

// The single inference-time kernel produced by folding. Conv/GConv:
// [c_out, (m*n), c_in/groups]; DConv: [(m*n), dw_mul, c_in] -- the exact shape
// of the corresponding layer without over-parameterization.
struct FoldedKernel {
  Tensor w;
  DoKind kind = DoKind::Conv;
};

// Per-channel (m*n) x d_mul matrix [I | I | ... | partial]: identity blocks
// along the d_mul axis, the last one completed with its leading columns.
// Equivalently fill[j,k,c] = (j == k mod m*n). Covers d_mul < m*n (leading
// columns only) and d_mul >= m*n alike.
Tensor identity_fill(std::size_t spatial, std::size_t d_mul, std::size_t c_in);

// Raw fold contractions over an explicit effective D.
// Conv/GConv: W'[o,j,l] = sum_k D[j,k,lambda(o,l)] W[o,k,l].
Tensor fold_conv_kernel(const Tensor& d_eff, const Tensor& w, const ConvGeometry& geom);
// DConv: W'[j,d,c] = sum_k D[j,k,c] W[k,d,c].
Tensor fold_depthwise_kernel(const Tensor& d_eff, const Tensor& w, const ConvGeometry& geom);

FoldedKernel fold_kernel(const DoConvParams& p);

// Raw two-mode forwards over an explicit effective D; these carry no layer
// policy (any d_mul >= 1 and m*n >= 1 go through) and back the property sweeps.
Tensor doconv_feature_raw(const Tensor& d_eff, const Tensor& w, const Tensor& x,
                          const ConvGeometry& geom, const Tensor* bias = nullptr);
Tensor doconv_kernel_raw(const Tensor& d_eff, const Tensor& w, const Tensor& x,
                         const ConvGeometry& geom, const Tensor* bias = nullptr);
Tensor dodconv_feature_raw(const Tensor& d_eff, const Tensor& w, const Tensor& x,
                           const ConvGeometry& geom, const Tensor* bias = nullptr);
Tensor dodconv_kernel_raw(const Tensor& d_eff, const Tensor& w, const Tensor& x,
                          const ConvGeometry& geom, const Tensor* bias = nullptr);

// Feature composition: P' = D o P, then O = W * P' with the d_mul axis as the
// patch axis.
Tensor doconv_forward_feature(const DoConvParams& p, const Tensor& x);

// Kernel composition: O = (D^T o W) * P; the folded kernel is computed once
// per feature map. Default mode for training-time code paths.
Tensor doconv_forward_kernel(const DoConvParams& p, const Tensor& x);

Tensor dodconv_forward(const DoConvParams& p, const Tensor& x, Composition mode);

// Per-step multiply-accumulate counts of one composition mode on an
// [h, w, c_in] feature map, stride 1.
struct MaccReport {
  Composition mode = Composition::Feature;
  std::vector<std::pair<std::string, std::uint64_t>> steps;
  std::uint64_t total = 0;
};

// Feature: d_mul*(m*n)*c_in*(h*w)  +  c_out*c_in*h*w*d_mul.
// Kernel:  d_mul*(m*n)*c_in*c_out  +  c_out*c_in*h*w*(m*n).
// Strides != 1 or grouped geometries are not modeled and are rejected.
MaccReport macc_estimate(const ConvGeometry& geom, Composition mode, std::size_t h, std::size_t w);

// Cost of running the folded kernel: c_out*c_in*h*w*(m*n), identical to a
// conventional convolution of the same geometry.
std::uint64_t macc_folded_inference(const ConvGeometry& geom, std::size_t h, std::size_t w);

// Accumulated absolute difference between the folded kernel and the raw one,
// per spatial position: H[m,n] = sum over (c_out, c_in) of |W'[.,mn,.] - W[.,mn,.]|.
// Requires an ungrouped layer with d_mul == m*n so the two are shape-compatible.
Tensor kernel_delta(const DoConvParams& p);

}  // namespace doconv
