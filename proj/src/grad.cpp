#include "doconv/grad.hpp"

#include <string>

namespace doconv {

namespace {

void check_upstream(const Tensor& up, std::size_t oh, std::size_t ow, std::size_t channels) {
  const Shape want{oh, ow, channels};
  if (!(up.shape() == want)) {
    throw ShapeError("upstream gradient must be " + want.str() + ", got " + up.shape().str());
  }
}

// Scatter per-patch gradients back onto the input grid, inverse of
// extract_patches. Fixed iteration order (position-major, then in-patch).
Tensor scatter_patches(const Tensor& gpatch, const ConvGeometry& g, std::size_t h,
                       std::size_t w) {
  const std::size_t oh = g.out_h(h), ow = g.out_w(w);
  const std::size_t mn = g.spatial(), c = g.c_in;
  Tensor gx({h, w, c});
  const double* src = gpatch.data();
  double* dst = gx.data();
  const auto ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const std::size_t p = oy * ow + ox;
      const auto y0 = static_cast<std::ptrdiff_t>(oy * g.stride) -
                      static_cast<std::ptrdiff_t>(g.pad);
      const auto x0 = static_cast<std::ptrdiff_t>(ox * g.stride) -
                      static_cast<std::ptrdiff_t>(g.pad);
      for (std::size_t m = 0; m < g.m; ++m) {
        const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(m);
        if (iy < 0 || iy >= ih) continue;
        for (std::size_t n = 0; n < g.n; ++n) {
          const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(n);
          if (ix < 0 || ix >= iw) continue;
          const double* cell = src + (p * mn + (m * g.n + n)) * c;
          double* row = dst + (static_cast<std::size_t>(iy) * w +
                               static_cast<std::size_t>(ix)) * c;
          for (std::size_t l = 0; l < c; ++l) row[l] += cell[l];
        }
      }
    }
  }
  return gx;
}

}  // namespace

ConvGrads conv_backward(const Tensor& x, const ConvKernel& k, const ConvGeometry& g,
                        const Tensor& upstream, bool want_bias) {
  g.validate();
  ConvKernel::make(k.weights, g);
  const std::size_t h = x.shape()[0], w = x.shape()[1];
  const PatchBatch pb = extract_patches(x, g);
  check_upstream(upstream, pb.out_h, pb.out_w, g.c_out);

  const std::size_t mn = g.spatial(), c = g.c_in, cg = g.in_per_group(), og = g.out_per_group();
  const std::size_t positions = pb.out_h * pb.out_w;
  const double* pat = pb.values.data();
  const double* up = upstream.data();
  const double* wv = k.weights.data();

  ConvGrads out;
  out.w = Tensor({g.c_out, mn, cg});
  double* gw = out.w.data();
  for (std::size_t p = 0; p < positions; ++p) {
    const double* patch = pat + p * mn * c;
    const double* urow = up + p * g.c_out;
    for (std::size_t o = 0; o < g.c_out; ++o) {
      const double u = urow[o];
      if (u == 0.0) continue;
      const std::size_t base_c = (o / og) * cg;
      double* grow = gw + o * mn * cg;
      for (std::size_t j = 0; j < mn; ++j) {
        const double* prow = patch + j * c + base_c;
        for (std::size_t l = 0; l < cg; ++l) grow[j * cg + l] += u * prow[l];
      }
    }
  }

  // dPatch[p,j,c] = sum over that channel's group outputs of up[p,o]*W[o,j,l(c)]
  Tensor gpatch({positions, mn, c});
  double* gp = gpatch.data();
  for (std::size_t p = 0; p < positions; ++p) {
    const double* urow = up + p * g.c_out;
    double* prow = gp + p * mn * c;
    for (std::size_t o = 0; o < g.c_out; ++o) {
      const double u = urow[o];
      if (u == 0.0) continue;
      const std::size_t base_c = (o / og) * cg;
      const double* wrow = wv + o * mn * cg;
      for (std::size_t j = 0; j < mn; ++j) {
        for (std::size_t l = 0; l < cg; ++l) prow[j * c + base_c + l] += u * wrow[j * cg + l];
      }
    }
  }
  out.x = scatter_patches(gpatch, g, h, w);

  if (want_bias) {
    out.has_bias = true;
    out.bias = Tensor({g.c_out});
    double* gb = out.bias.data();
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t o = 0; o < g.c_out; ++o) gb[o] += up[p * g.c_out + o];
    }
  }
  return out;
}

ConvGrads depthwise_backward(const Tensor& x, const DepthwiseKernel& k, const ConvGeometry& g,
                             const Tensor& upstream, bool want_bias) {
  g.validate();
  DepthwiseKernel::make(k.weights, g);
  const std::size_t h = x.shape()[0], w = x.shape()[1];
  const PatchBatch pb = extract_patches(x, g);
  const std::size_t channels = g.c_in * g.d_mul;
  check_upstream(upstream, pb.out_h, pb.out_w, channels);

  const std::size_t mn = g.spatial(), c = g.c_in, dm = g.d_mul;
  const std::size_t positions = pb.out_h * pb.out_w;
  const double* pat = pb.values.data();
  const double* up = upstream.data();
  const double* wv = k.weights.data();

  ConvGrads out;
  out.w = Tensor({mn, dm, c});
  Tensor gpatch({positions, mn, c});
  double* gw = out.w.data();
  double* gp = gpatch.data();
  for (std::size_t p = 0; p < positions; ++p) {
    const double* patch = pat + p * mn * c;
    const double* urow = up + p * channels;
    double* prow = gp + p * mn * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t d = 0; d < dm; ++d) {
        const double u = urow[ch * dm + d];
        if (u == 0.0) continue;
        for (std::size_t j = 0; j < mn; ++j) {
          gw[(j * dm + d) * c + ch] += u * patch[j * c + ch];
          prow[j * c + ch] += u * wv[(j * dm + d) * c + ch];
        }
      }
    }
  }
  out.x = scatter_patches(gpatch, g, h, w);

  if (want_bias) {
    out.has_bias = true;
    out.bias = Tensor({channels});
    double* gb = out.bias.data();
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t ch = 0; ch < channels; ++ch) gb[ch] += up[p * channels + ch];
    }
  }
  return out;
}

DoConvGrads doconv_backward(const DoConvParams& p, const Tensor& x, const Tensor& upstream) {
  p.validate();
  const ConvGeometry& g = p.geom;
  const Tensor d_eff = p.effective_d();
  const std::size_t mn = g.spatial(), dm = g.d_mul, c = g.c_in;

  DoConvGrads out;
  out.d_residual = Tensor({mn, dm, c});
  double* gd = out.d_residual.data();
  const double* dv = d_eff.data();
  const double* wv = p.w.data();

  if (p.kind == DoKind::DConv) {
    const std::size_t dw = p.dw_mul();
    const Tensor folded = fold_depthwise_kernel(d_eff, p.w, g);
    ConvGeometry dg = g;
    dg.d_mul = dw;
    const ConvGrads cg = depthwise_backward(x, DepthwiseKernel{folded}, dg, upstream, p.has_bias);
    out.x = cg.x;
    out.bias = cg.bias;
    out.has_bias = cg.has_bias;

    // dW[k,d,c] = sum_j dW'[j,d,c] D[j,k,c];  dD[j,k,c] = sum_d dW'[j,d,c] W[k,d,c]
    out.w = Tensor({dm, dw, c});
    double* gw = out.w.data();
    const double* gf = cg.w.data();
    for (std::size_t j = 0; j < mn; ++j) {
      for (std::size_t d = 0; d < dw; ++d) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double gfv = gf[(j * dw + d) * c + ch];
          if (gfv == 0.0) continue;
          for (std::size_t k = 0; k < dm; ++k) {
            gw[(k * dw + d) * c + ch] += gfv * dv[(j * dm + k) * c + ch];
            gd[(j * dm + k) * c + ch] += gfv * wv[(k * dw + d) * c + ch];
          }
        }
      }
    }
    return out;
  }

  const std::size_t cgc = g.in_per_group(), og = g.out_per_group();
  const Tensor folded = fold_conv_kernel(d_eff, p.w, g);
  const ConvGrads cg = conv_backward(x, ConvKernel{folded}, g, upstream, p.has_bias);
  out.x = cg.x;
  out.bias = cg.bias;
  out.has_bias = cg.has_bias;

  // dW[o,k,l] = sum_j dW'[o,j,l] D[j,k,lambda(o,l)]
  // dD[j,k,lambda(o,l)] += dW'[o,j,l] W[o,k,l]
  out.w = Tensor({g.c_out, dm, cgc});
  double* gw = out.w.data();
  const double* gf = cg.w.data();
  for (std::size_t o = 0; o < g.c_out; ++o) {
    const std::size_t base_c = (o / og) * cgc;
    for (std::size_t j = 0; j < mn; ++j) {
      for (std::size_t l = 0; l < cgc; ++l) {
        const double gfv = gf[(o * mn + j) * cgc + l];
        if (gfv == 0.0) continue;
        const std::size_t abs_c = base_c + l;
        for (std::size_t k = 0; k < dm; ++k) {
          gw[(o * dm + k) * cgc + l] += gfv * dv[(j * dm + k) * c + abs_c];
          gd[(j * dm + k) * c + abs_c] += gfv * wv[(o * dm + k) * cgc + l];
        }
      }
    }
  }
  return out;
}

}  // namespace doconv
