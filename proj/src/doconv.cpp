#include "doconv/doconv.hpp"

#include <cmath>
#include <string>

namespace doconv {

const char* do_kind_name(DoKind kind) {
  switch (kind) {
    case DoKind::Conv: return "do-conv";
    case DoKind::DConv: return "do-dconv";
    case DoKind::GConv: return "do-gconv";
  }
  return "?";
}

const char* composition_name(Composition mode) {
  return mode == Composition::Feature ? "feature" : "kernel";
}

Tensor identity_fill(std::size_t spatial, std::size_t d_mul, std::size_t c_in) {
  if (spatial == 0 || d_mul == 0 || c_in == 0) {
    throw ShapeError("identity_fill dimensions must be >= 1");
  }
  Tensor t({spatial, d_mul, c_in});
  double* v = t.data();
  for (std::size_t k = 0; k < d_mul; ++k) {
    const std::size_t j = k % spatial;
    for (std::size_t c = 0; c < c_in; ++c) v[(j * d_mul + k) * c_in + c] = 1.0;
  }
  return t;
}

namespace {

void check_d_shape(const Tensor& d, const ConvGeometry& g) {
  const Shape want{g.spatial(), g.d_mul, g.c_in};
  if (!(d.shape() == want)) {
    throw ShapeError("depthwise D must be " + want.str() + ", got " + d.shape().str());
  }
}

void check_w_conv(const Tensor& w, const ConvGeometry& g) {
  const Shape want{g.c_out, g.d_mul, g.in_per_group()};
  if (!(w.shape() == want)) {
    throw ShapeError("W must be " + want.str() + ", got " + w.shape().str());
  }
}

void check_w_dconv(const Tensor& w, const ConvGeometry& g) {
  if (w.shape().rank() != 3 || w.shape()[0] != g.d_mul || w.shape()[2] != g.c_in) {
    throw ShapeError("depthwise W must be [d_mul, dw_mul, c_in], got " + w.shape().str());
  }
  if (g.c_out != w.shape()[1] * g.c_in) {
    throw ShapeError("c_out must equal dw_mul * c_in for an over-parameterized depthwise layer");
  }
}

}  // namespace

DoConvParams DoConvParams::create(DoKind kind, const ConvGeometry& geom, Tensor d_residual,
                                  Tensor w, bool separable) {
  geom.validate();
  if (geom.spatial() == 1) {
    throw GeometryError("1x1 kernels have no spatial patch to over-parameterize; "
                        "use a plain convolution");
  }
  if (!separable && geom.d_mul < geom.spatial()) {
    throw GeometryError("d_mul=" + std::to_string(geom.d_mul) + " < m*n=" +
                        std::to_string(geom.spatial()) +
                        " drops expressiveness; pass separable=true to opt in");
  }
  check_d_shape(d_residual, geom);
  if (kind == DoKind::DConv) {
    check_w_dconv(w, geom);
  } else {
    if (kind == DoKind::Conv && geom.groups != 1) {
      throw GeometryError("grouped geometry requires DoKind::GConv");
    }
    check_w_conv(w, geom);
  }
  DoConvParams p;
  p.kind = kind;
  p.geom = geom;
  p.d_residual = std::move(d_residual);
  p.w = std::move(w);
  p.separable = separable;
  return p;
}

DoConvParams DoConvParams::with_bias(Tensor b) const {
  const std::size_t channels = kind == DoKind::DConv ? dw_mul() * geom.c_in : geom.c_out;
  if (b.shape().rank() != 1 || b.shape()[0] != channels) {
    throw ShapeError("bias must be [" + std::to_string(channels) + "], got " + b.shape().str());
  }
  DoConvParams p = *this;
  p.bias = std::move(b);
  p.has_bias = true;
  return p;
}

std::size_t DoConvParams::dw_mul() const {
  if (kind != DoKind::DConv) throw UnsupportedError("dw_mul is defined for DConv only");
  return w.shape()[1];
}

Tensor DoConvParams::effective_d() const {
  Tensor d = identity_fill(geom.spatial(), geom.d_mul, geom.c_in);
  const double* r = d_residual.data();
  double* v = d.data();
  for (std::size_t i = 0; i < d.size(); ++i) v[i] += r[i];
  return d;
}

void DoConvParams::validate() const {
  geom.validate();
  check_d_shape(d_residual, geom);
  if (kind == DoKind::DConv) {
    check_w_dconv(w, geom);
  } else {
    check_w_conv(w, geom);
  }
}

Tensor fold_conv_kernel(const Tensor& d_eff, const Tensor& w, const ConvGeometry& g) {
  check_d_shape(d_eff, g);
  check_w_conv(w, g);
  const std::size_t mn = g.spatial(), dm = g.d_mul, cg = g.in_per_group(), og = g.out_per_group();
  Tensor out({g.c_out, mn, cg});
  const double* dv = d_eff.data();
  const double* wv = w.data();
  double* ov = out.data();
  for (std::size_t o = 0; o < g.c_out; ++o) {
    const std::size_t base_c = (o / og) * cg;
    for (std::size_t j = 0; j < mn; ++j) {
      for (std::size_t l = 0; l < cg; ++l) {
        const std::size_t abs_c = base_c + l;
        double s = 0;
        for (std::size_t k = 0; k < dm; ++k) {
          s += dv[(j * dm + k) * g.c_in + abs_c] * wv[(o * dm + k) * cg + l];
        }
        ov[(o * mn + j) * cg + l] = s;
      }
    }
  }
  return out;
}

Tensor fold_depthwise_kernel(const Tensor& d_eff, const Tensor& w, const ConvGeometry& g) {
  check_d_shape(d_eff, g);
  check_w_dconv(w, g);
  const std::size_t mn = g.spatial(), dm = g.d_mul, c = g.c_in, dw = w.shape()[1];
  Tensor out({mn, dw, c});
  const double* dv = d_eff.data();
  const double* wv = w.data();
  double* ov = out.data();
  for (std::size_t j = 0; j < mn; ++j) {
    for (std::size_t d = 0; d < dw; ++d) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0;
        for (std::size_t k = 0; k < dm; ++k) {
          s += dv[(j * dm + k) * c + ch] * wv[(k * dw + d) * c + ch];
        }
        ov[(j * dw + d) * c + ch] = s;
      }
    }
  }
  return out;
}

FoldedKernel fold_kernel(const DoConvParams& p) {
  p.validate();
  const Tensor d = p.effective_d();
  if (p.kind == DoKind::DConv) {
    return FoldedKernel{fold_depthwise_kernel(d, p.w, p.geom), p.kind};
  }
  return FoldedKernel{fold_conv_kernel(d, p.w, p.geom), p.kind};
}

namespace {

// P'[p,k,c] = sum_j D[j,k,c] * patch[p,j,c] for every output position.
Tensor transform_patches(const PatchBatch& pb, const Tensor& d_eff, const ConvGeometry& g) {
  const std::size_t mn = g.spatial(), dm = g.d_mul, c = g.c_in;
  const std::size_t positions = pb.out_h * pb.out_w;
  Tensor out({positions, dm, c});
  const double* pat = pb.values.data();
  const double* dv = d_eff.data();
  double* ov = out.data();
  for (std::size_t p = 0; p < positions; ++p) {
    const double* patch = pat + p * mn * c;
    double* prow = ov + p * dm * c;
    for (std::size_t k = 0; k < dm; ++k) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0;
        for (std::size_t j = 0; j < mn; ++j) s += dv[(j * dm + k) * c + ch] * patch[j * c + ch];
        prow[k * c + ch] = s;
      }
    }
  }
  return out;
}

void add_bias_inplace(Tensor& map, const Tensor* bias) {
  if (!bias) return;
  const std::size_t c = map.shape()[2];
  if (bias->shape().rank() != 1 || bias->shape()[0] != c) {
    throw ShapeError("bias must be [" + std::to_string(c) + "], got " + bias->shape().str());
  }
  double* v = map.data();
  const double* b = bias->data();
  const std::size_t positions = map.shape()[0] * map.shape()[1];
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) v[p * c + ch] += b[ch];
  }
}

}  // namespace

Tensor doconv_feature_raw(const Tensor& d_eff, const Tensor& w, const Tensor& x,
                          const ConvGeometry& g, const Tensor* bias) {
  g.validate();
  check_d_shape(d_eff, g);
  check_w_conv(w, g);
  const PatchBatch pb = extract_patches(x, g);
  const Tensor pprime = transform_patches(pb, d_eff, g);

  const std::size_t dm = g.d_mul, c = g.c_in, cg = g.in_per_group(), og = g.out_per_group();
  const std::size_t positions = pb.out_h * pb.out_w;
  Tensor out({pb.out_h, pb.out_w, g.c_out});
  const double* pv = pprime.data();
  const double* wv = w.data();
  double* ov = out.data();
  for (std::size_t p = 0; p < positions; ++p) {
    const double* prow = pv + p * dm * c;
    for (std::size_t o = 0; o < g.c_out; ++o) {
      const std::size_t base_c = (o / og) * cg;
      double s = 0;
      for (std::size_t k = 0; k < dm; ++k) {
        for (std::size_t l = 0; l < cg; ++l) {
          s += wv[(o * dm + k) * cg + l] * prow[k * c + base_c + l];
        }
      }
      ov[p * g.c_out + o] = s;
    }
  }
  add_bias_inplace(out, bias);
  return out;
}

Tensor doconv_kernel_raw(const Tensor& d_eff, const Tensor& w, const Tensor& x,
                         const ConvGeometry& g, const Tensor* bias) {
  g.validate();
  const Tensor folded = fold_conv_kernel(d_eff, w, g);
  return grouped_conv_forward(x, ConvKernel{folded}, g, bias);
}

Tensor dodconv_feature_raw(const Tensor& d_eff, const Tensor& w, const Tensor& x,
                           const ConvGeometry& g, const Tensor* bias) {
  g.validate();
  check_d_shape(d_eff, g);
  check_w_dconv(w, g);
  const PatchBatch pb = extract_patches(x, g);
  const Tensor pprime = transform_patches(pb, d_eff, g);

  const std::size_t dm = g.d_mul, c = g.c_in, dw = w.shape()[1];
  const std::size_t positions = pb.out_h * pb.out_w;
  Tensor out({pb.out_h, pb.out_w, c * dw});
  const double* pv = pprime.data();
  const double* wv = w.data();
  double* ov = out.data();
  for (std::size_t p = 0; p < positions; ++p) {
    const double* prow = pv + p * dm * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t d = 0; d < dw; ++d) {
        double s = 0;
        for (std::size_t k = 0; k < dm; ++k) s += wv[(k * dw + d) * c + ch] * prow[k * c + ch];
        ov[p * c * dw + ch * dw + d] = s;
      }
    }
  }
  add_bias_inplace(out, bias);
  return out;
}

Tensor dodconv_kernel_raw(const Tensor& d_eff, const Tensor& w, const Tensor& x,
                          const ConvGeometry& g, const Tensor* bias) {
  g.validate();
  const Tensor folded = fold_depthwise_kernel(d_eff, w, g);
  ConvGeometry dg = g;
  dg.d_mul = w.shape()[1];  // the folded kernel's multiplier is dw_mul
  return depthwise_forward(x, DepthwiseKernel{folded}, dg, bias);
}

Tensor doconv_forward_feature(const DoConvParams& p, const Tensor& x) {
  p.validate();
  const Tensor d = p.effective_d();
  const Tensor* b = p.has_bias ? &p.bias : nullptr;
  if (p.kind == DoKind::DConv) return dodconv_feature_raw(d, p.w, x, p.geom, b);
  return doconv_feature_raw(d, p.w, x, p.geom, b);
}

Tensor doconv_forward_kernel(const DoConvParams& p, const Tensor& x) {
  p.validate();
  const Tensor d = p.effective_d();
  const Tensor* b = p.has_bias ? &p.bias : nullptr;
  if (p.kind == DoKind::DConv) return dodconv_kernel_raw(d, p.w, x, p.geom, b);
  return doconv_kernel_raw(d, p.w, x, p.geom, b);
}

Tensor dodconv_forward(const DoConvParams& p, const Tensor& x, Composition mode) {
  if (p.kind != DoKind::DConv) throw UnsupportedError("dodconv_forward requires a DConv layer");
  return mode == Composition::Feature ? doconv_forward_feature(p, x)
                                      : doconv_forward_kernel(p, x);
}

MaccReport macc_estimate(const ConvGeometry& geom, Composition mode, std::size_t h,
                         std::size_t w) {
  geom.validate();
  if (geom.stride != 1) {
    throw UnsupportedError("the composition cost model assumes stride 1");
  }
  if (geom.groups != 1) {
    throw UnsupportedError("the composition cost model covers ungrouped layers");
  }
  const std::uint64_t mn = geom.spatial(), dm = geom.d_mul;
  const std::uint64_t cin = geom.c_in, cout = geom.c_out, hw = std::uint64_t{h} * w;

  MaccReport r;
  r.mode = mode;
  if (mode == Composition::Feature) {
    r.steps.emplace_back("P' = D o P", dm * mn * cin * hw);
    r.steps.emplace_back("O = W * P'", cout * cin * hw * dm);
  } else {
    r.steps.emplace_back("W' = D^T o W", dm * mn * cin * cout);
    r.steps.emplace_back("O = W' * P", cout * cin * hw * mn);
  }
  for (const auto& [_, cost] : r.steps) r.total += cost;
  return r;
}

std::uint64_t macc_folded_inference(const ConvGeometry& geom, std::size_t h, std::size_t w) {
  geom.validate();
  return std::uint64_t{geom.c_out} * geom.c_in * h * w * geom.spatial();
}

Tensor kernel_delta(const DoConvParams& p) {
  p.validate();
  if (p.kind == DoKind::DConv || p.geom.groups != 1) {
    throw UnsupportedError("kernel delta is defined for ungrouped DO-Conv layers");
  }
  if (p.geom.d_mul != p.geom.spatial()) {
    throw UnsupportedError("kernel delta needs d_mul == m*n so W' and W are shape-compatible");
  }
  const Tensor folded = fold_conv_kernel(p.effective_d(), p.w, p.geom);
  const std::size_t mn = p.geom.spatial(), c = p.geom.c_in;
  Tensor h({p.geom.m, p.geom.n});
  double* hv = h.data();
  const double* fv = folded.data();
  const double* wv = p.w.data();
  for (std::size_t o = 0; o < p.geom.c_out; ++o) {
    for (std::size_t j = 0; j < mn; ++j) {
      for (std::size_t l = 0; l < c; ++l) {
        hv[j] += std::abs(fv[(o * mn + j) * c + l] - wv[(o * mn + j) * c + l]);
      }
    }
  }
  return h;
}

}  // namespace doconv
