#include "doconv/conv.hpp"

#include <string>

namespace doconv {

namespace {

void check_bias(const Tensor* bias, std::size_t channels) {
  if (!bias) return;
  if (bias->shape().rank() != 1 || bias->shape()[0] != channels) {
    throw ShapeError("bias must be [" + std::to_string(channels) + "], got " +
                     bias->shape().str());
  }
}

// Shared grouped path. Group g of output channel o reads input channels
// [g*cg, (g+1)*cg); the sum runs j-major then l, matching the flattened
// (m*n) x c_in index of the definition.
Tensor conv_impl(const Tensor& x, const Tensor& w, const ConvGeometry& g, const Tensor* bias) {
  const PatchBatch pb = extract_patches(x, g);
  const std::size_t mn = g.spatial(), c = g.c_in, cg = g.in_per_group(), og = g.out_per_group();
  const std::size_t positions = pb.out_h * pb.out_w;

  Tensor out({pb.out_h, pb.out_w, g.c_out});
  const double* pat = pb.values.data();
  const double* wt = w.data();
  double* dst = out.data();

  for (std::size_t p = 0; p < positions; ++p) {
    const double* patch = pat + p * mn * c;
    for (std::size_t o = 0; o < g.c_out; ++o) {
      const std::size_t base_c = (o / og) * cg;
      const double* wrow = wt + o * mn * cg;
      double s = 0;
      for (std::size_t j = 0; j < mn; ++j) {
        const double* prow = patch + j * c + base_c;
        const double* krow = wrow + j * cg;
        for (std::size_t l = 0; l < cg; ++l) s += krow[l] * prow[l];
      }
      dst[p * g.c_out + o] = bias ? s + (*bias)[o] : s;
    }
  }
  return out;
}

}  // namespace

ConvKernel ConvKernel::make(Tensor weights, const ConvGeometry& geom) {
  geom.validate();
  const Shape want{geom.c_out, geom.spatial(), geom.in_per_group()};
  if (!(weights.shape() == want)) {
    throw ShapeError("conv kernel must be " + want.str() + ", got " + weights.shape().str());
  }
  return ConvKernel{std::move(weights)};
}

DepthwiseKernel DepthwiseKernel::make(Tensor weights, const ConvGeometry& geom) {
  geom.validate();
  const Shape want{geom.spatial(), geom.d_mul, geom.c_in};
  if (!(weights.shape() == want)) {
    throw ShapeError("depthwise kernel must be " + want.str() + ", got " + weights.shape().str());
  }
  return DepthwiseKernel{std::move(weights)};
}

Tensor conv_forward(const Tensor& x, const ConvKernel& k, const ConvGeometry& geom,
                    const Tensor* bias) {
  geom.validate();
  if (geom.groups != 1) {
    throw GeometryError("conv_forward is the plain path (groups == 1); use grouped_conv_forward");
  }
  ConvKernel::make(k.weights, geom);  // shape check
  check_bias(bias, geom.c_out);
  return conv_impl(x, k.weights, geom, bias);
}

Tensor grouped_conv_forward(const Tensor& x, const ConvKernel& k, const ConvGeometry& geom,
                            const Tensor* bias) {
  geom.validate();
  ConvKernel::make(k.weights, geom);
  check_bias(bias, geom.c_out);
  return conv_impl(x, k.weights, geom, bias);
}

Tensor depthwise_forward(const Tensor& x, const DepthwiseKernel& k, const ConvGeometry& geom,
                         const Tensor* bias) {
  geom.validate();
  DepthwiseKernel::make(k.weights, geom);
  const std::size_t out_channels = geom.c_in * geom.d_mul;
  check_bias(bias, out_channels);

  const PatchBatch pb = extract_patches(x, geom);
  const std::size_t mn = geom.spatial(), c = geom.c_in, dm = geom.d_mul;
  const std::size_t positions = pb.out_h * pb.out_w;

  Tensor out({pb.out_h, pb.out_w, out_channels});
  const double* pat = pb.values.data();
  const double* wt = k.weights.data();
  double* dst = out.data();

  for (std::size_t p = 0; p < positions; ++p) {
    const double* patch = pat + p * mn * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t d = 0; d < dm; ++d) {
        double s = 0;
        for (std::size_t j = 0; j < mn; ++j) s += wt[(j * dm + d) * c + ch] * patch[j * c + ch];
        const std::size_t oc = ch * dm + d;
        dst[p * out_channels + oc] = bias ? s + (*bias)[oc] : s;
      }
    }
  }
  return out;
}

}  // namespace doconv
